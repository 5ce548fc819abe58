"""Ready-made scenes used by the CLI, the experiment scripts and the tests."""

from __future__ import annotations

import numpy as np

from qsi.statistics import NoiseModel, ProbeSpec
from qsi.simulator import (
    PixelGrid,
    SceneSpec,
    TransmissionMask,
    make_flat_mode,
    make_gaussian_mode,
    make_orthogonal_mode_family,
    make_tiled_mode_family,
)

# Per-pixel LO photons; >= 1e5 keeps dark noise negligible.
DEFAULT_LO_PER_PIXEL = 1e6


def _probe(n_total: float, modes: int = 1, kind: str = "thermal") -> ProbeSpec:
    if kind == "vacuum" or n_total == 0:
        return ProbeSpec.vacuum() if modes == 1 else ProbeSpec.thermal(0.0, modes)
    if kind == "coherent":
        return ProbeSpec.coherent(n_total)
    return ProbeSpec.thermal(n_total, modes)


def flat_scene(
    size: int = 128,
    n_pxl: float = 0.1,
    dark_std: float = 10.0,
    mask: TransmissionMask | None = None,
    lo_per_pixel: float = DEFAULT_LO_PER_PIXEL,
    kind: str = "thermal",
    **timing,
) -> SceneSpec:
    """Uniform single-mode probe and LO, ``n_pxl`` probe photons per pixel."""
    grid = PixelGrid(size, size)
    mode = make_flat_mode(grid)
    mask = TransmissionMask.clear(grid) if mask is None else mask
    return SceneSpec(
        grid, _probe(n_pxl * grid.size, 1, kind), [mode], mode, lo_per_pixel * grid.size,
        mask, NoiseModel(dark_std), **timing,
    )


def gaussian_scene(
    size: int = 128,
    waist_px: float = 30.0,
    peak_n_pxl: float = 0.1,
    dark_std: float = 10.0,
    mask: TransmissionMask | None = None,
    lo_peak_per_pixel: float = DEFAULT_LO_PER_PIXEL,
    **timing,
) -> SceneSpec:
    """Mode-matched Gaussian probe and LO; ``peak_n_pxl`` photons on the central pixel."""
    grid = PixelGrid(size, size)
    mode = make_gaussian_mode(grid, waist_px)
    peak = float(mode.intensity.max())
    mask = TransmissionMask.clear(grid) if mask is None else mask
    return SceneSpec(
        grid, _probe(peak_n_pxl / peak), [mode], mode, lo_peak_per_pixel / peak,
        mask, NoiseModel(dark_std), **timing,
    )


def demo_scene(**overrides) -> SceneSpec:
    """Bundled half-block demo: 128x128, waist 30, left half blocked, 0.1 photons at peak."""
    size = overrides.pop("size", 128)
    grid = PixelGrid(size, size)
    overrides.setdefault("mask", TransmissionMask.half_plane(grid))
    return gaussian_scene(size=size, **overrides)


def speckle_scene(
    n_detect: float,
    radius: int,
    size: int = 256,
    tile_px: int = 16,
    dark_std: float = 10.0,
    blocked: bool = True,
    lo_per_pixel: float = DEFAULT_LO_PER_PIXEL,
    cluster_frames: int = 1,
    usable_indices: tuple[int, ...] = (0,),
) -> SceneSpec:
    """Half-blocked speckle probe for SNR sweeps.

    The probe is a family of flat tiles, each an independent thermal mode, so
    neighbouring tiles fluctuate independently and the spatial spread of the
    variance map over many tiles samples the single-shot noise.  The photon
    number per detection disk of radius ``radius`` is ``n_detect``.
    """
    from qsi.pipeline import disk_area

    grid = PixelGrid(size, size)
    modes = make_tiled_mode_family(grid, tile_px)
    n_pxl = n_detect / disk_area(radius)
    mask = TransmissionMask.half_plane(grid) if blocked else TransmissionMask.clear(grid)
    return SceneSpec(
        grid, _probe(n_pxl * grid.size, len(modes)), modes, make_flat_mode(grid),
        lo_per_pixel * grid.size, mask, NoiseModel(dark_std),
        cluster_frames=cluster_frames, usable_indices=usable_indices,
    )


def speckle_rois(grid: PixelGrid, tile_px: int, radius: int, boundary: int | None = None):
    """(unblocked, blocked) ROIs of bin centers whose disk stays inside one tile."""
    from qsi.pipeline import Roi

    x, y = grid.coordinates()
    lx, ly = x.astype(int) % tile_px, y.astype(int) % tile_px
    inside = (lx >= radius) & (lx < tile_px - radius) & (ly >= radius) & (ly < tile_px - radius)
    b = grid.width // 2 if boundary is None else boundary
    return Roi(inside & (x >= b), "unblocked"), Roi(inside & (x < b), "blocked")


def multimode_scene(
    j: int = 5,
    n_total: float = 10.0,
    size: int = 96,
    waist_px: float = 12.0,
    dark_std: float = 10.0,
    lo_peak_per_pixel: float = DEFAULT_LO_PER_PIXEL,
    **timing,
) -> SceneSpec:
    """``j`` equally populated Hermite-Gauss probe modes against a Gaussian LO."""
    grid = PixelGrid(size, size)
    modes = make_orthogonal_mode_family(grid, waist_px, j)
    lo = modes[0]
    peak = float(lo.intensity.max())
    lo_photons = max(lo_peak_per_pixel / peak, 100.0 * max(1.0, n_total))
    return SceneSpec(
        grid, _probe(n_total, j), modes, lo, lo_photons, TransmissionMask.clear(grid),
        NoiseModel(dark_std), **timing,
    )


def wing_mask(grid: PixelGrid) -> TransmissionMask:
    """Procedural insect-wing-like object: a veined, semi-transparent ellipse.

    Used to generate the bundled ``wing.pgm``; values are 0 (vein), 1 (open)
    and 128/255 (membrane, exact in an 8-bit graymap).
    """
    x, y = grid.coordinates()
    cx, cy = grid.center
    u = (x - cx) / (0.42 * grid.width)
    v = (y - cy) / (0.22 * grid.height)
    t = np.ones(grid.shape)
    wing = u * u + v * v <= 1.0
    t[wing] = 128.0 / 255.0
    ang = np.arctan2(v, u + 1.2)
    for k in range(-2, 3):
        vein = np.abs(np.sin(ang - 0.18 * k)) * np.hypot(u + 1.2, v) < 0.035
        t[wing & vein] = 0.0
    t[wing & (np.abs(u * u + v * v - 1.0) < 0.08)] = 0.0
    return TransmissionMask(grid, t)

