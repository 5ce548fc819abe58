"""Monte Carlo experiments behind the CLI commands and the acceptance suite.

Each function returns plain rows (lists of dicts) so callers can print,
write CSV or assert on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qsi import pipeline, scenes, statistics
from qsi.errors import GeometryError
from qsi.simulator import TransmissionMask, iter_qsi_clusters, sample_cdi_frames

# Photon number per detection area at which the fixed-gain sweep is pinned.
AREA_SWEEP_ANCHOR = (0.7, 3)


@dataclass(frozen=True)
class SweepSettings:
    clusters: int = 600
    replicates: int = 1
    size: int = 256
    tile_px: int = 16
    dark_std: float = 10.0
    seed: int = 0
    workers: int = 1


def _replicate_seed(seed: int, strategy: int, point: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, strategy, point, rep]).generate_state(1, np.uint64)[0])


def _summarize(snrs: list[float], jk_se: list[float]) -> tuple[float, float]:
    # replicate mean; its error combines the per-replicate jackknife errors
    k = len(snrs)
    return float(np.mean(snrs)), float(math.sqrt(sum(e * e for e in jk_se)) / k)


def _row(n, radius, snr, se, strategy):
    theory = statistics.snr_qsi_opaque(n)
    rel = (snr - theory) / theory if theory > 0 else float("nan")
    return {
        "n_mean": float(n), "snr_sim": snr, "snr_se": se, "snr_theory": theory,
        "rel_err": rel, "bin_radius": int(radius), "strategy": strategy,
    }


def snr_sweep_gain(n_values: Sequence[float], radius: int = 6, cfg: SweepSettings = SweepSettings()):
    """Vary the probe gain at a fixed detection area (disk of ``radius``)."""
    rows = []
    for i, n in enumerate(n_values):
        snrs, jk = [], []
        for rep in range(cfg.replicates):
            scene = scenes.speckle_scene(n, radius, cfg.size, cfg.tile_px, cfg.dark_std)
            ru, rb = scenes.speckle_rois(scene.grid, cfg.tile_px, radius)
            seed = _replicate_seed(cfg.seed, 1, i, rep)
            vmap = pipeline.variance_map(iter_qsi_clusters(scene, cfg.clusters, seed, workers=cfg.workers), radius)
            s, e = pipeline.roi_snr_with_error(vmap, ru, rb)
            snrs.append(s)
            jk.append(e)
        rows.append(_row(n, radius, *_summarize(snrs, jk), "gain"))
    return rows


def snr_sweep_area(
    radii: Sequence[int] = (2, 3, 4, 5, 6, 7),
    anchor: tuple[float, int] = AREA_SWEEP_ANCHOR,
    cfg: SweepSettings = SweepSettings(),
):
    """Vary the detection area at a fixed gain.

    The gain is set so that a disk of radius ``anchor[1]`` collects
    ``anchor[0]`` photons; one simulation serves every radius.
    """
    n_anchor, r_anchor = anchor
    n_pxl = n_anchor / pipeline.disk_area(r_anchor)
    per_r = {r: [] for r in radii}
    jk = {r: [] for r in radii}
    for rep in range(cfg.replicates):
        scene = scenes.speckle_scene(n_anchor, r_anchor, cfg.size, cfg.tile_px, cfg.dark_std)
        seed = _replicate_seed(cfg.seed, 2, 0, rep)
        maps = pipeline.variance_maps(iter_qsi_clusters(scene, cfg.clusters, seed, workers=cfg.workers), radii)
        for r in radii:
            ru, rb = scenes.speckle_rois(scene.grid, cfg.tile_px, r)
            s, e = pipeline.roi_snr_with_error(maps[r], ru, rb)
            per_r[r].append(s)
            jk[r].append(e)
    return [
        _row(n_pxl * pipeline.disk_area(r), r, *_summarize(per_r[r], jk[r]), "area") for r in radii
    ]


def area_sweep_photons(radii: Sequence[int] = (2, 3, 4, 5, 6, 7), anchor=AREA_SWEEP_ANCHOR) -> list[float]:
    """Photon numbers visited by :func:`snr_sweep_area`."""
    n_pxl = anchor[0] / pipeline.disk_area(anchor[1])
    return [n_pxl * pipeline.disk_area(r) for r in radii]


def default_gain_grid(radii: Sequence[int] = (2, 3, 4, 5, 6, 7)) -> list[float]:
    """Eight points over [0.2, 5] that include every photon number of the area sweep."""
    pts = {0.2, 5.0} | {round(n, 12) for n in area_sweep_photons(radii)}
    return sorted(p for p in pts if 0.2 <= p <= 5.0)


def compare_cdi(
    n_grid: Sequence[float],
    dark_stds: Sequence[float] = tuple(range(11)),
    mc_dark_std: float | None = 10.0,
    mc_frames: int = 2000,
    seed: int = 0,
):
    """Analytic QSI and CDI SNR for an opaque object, plus Monte Carlo CDI points.

    The Monte Carlo column simulates a single coherent pixel behind an opaque
    object and a clear reference with ``mc_dark_std`` detector noise.
    """
    rows = []
    for i, n in enumerate(n_grid):
        row = {"n_mean": float(n), "snr_qsi": statistics.snr_qsi(n, 0.0)}
        for d in dark_stds:
            row[f"snr_cdi_d{d:g}"] = statistics.snr_cdi(n, 0.0, d)
        if mc_dark_std is not None and n > 0:
            scene = scenes.flat_scene(1, n, mc_dark_std, lo_per_pixel=100.0 * max(1.0, n), kind="coherent")
            scene = scene.with_mask(TransmissionMask.opaque(scene.grid))
            probe, ref = sample_cdi_frames(scene, mc_frames, _replicate_seed(seed, 3, i, 0))
            row["snr_cdi_mc"] = pipeline.differential_snr(probe, ref)
        rows.append(row)
    return rows


def calibration_run(scene, clusters: int, radii: Sequence[int], seed: int, max_radius: int | None = None):
    """Linear calibration over ``radii`` plus an optional saturation scan out to ``max_radius``.

    Returns ``(CalibrationResult, scan, flag)``; ``scan`` and ``flag`` are
    empty/False without a saturation scan.
    """
    radii = sorted(int(r) for r in radii)
    half = min(scene.grid.width, scene.grid.height) // 2
    if max_radius and max_radius > half:
        raise GeometryError(f"radius {max_radius} exceeds the grid half-size {half}")
    if not max_radius:
        return pipeline.calibrate(iter_qsi_clusters(scene, clusters, seed), radii), [], False
    # disjoint cluster ids for the fit and the scan keep the two independent
    n_fit = clusters // 2
    cal = pipeline.calibrate(iter_qsi_clusters(scene, n_fit, seed), radii)
    scan_radii = sorted(set(radii) | set(range(0, max_radius + 1, 2)) | {max_radius})
    scan = pipeline.saturation_scan(iter_qsi_clusters(scene, clusters - n_fit, seed, first_id=n_fit), scan_radii)
    flag = pipeline.saturation_flag(cal, scan)
    if flag:
        n_tot = scene.probe.mean_photons_total
        if n_tot > 0 and scan[-1][1] > 1.0:
            cal.saturation_j_estimate = pipeline.estimate_mode_count(scan[-1][1], n_tot)
    return cal, scan, flag

