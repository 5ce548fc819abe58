"""Command line front-end: ``qsi simulate | reconstruct | snr-curve | compare-cdi | calibrate``.

Every command prints one machine-readable ``RESULT key=value ...`` line on
standard output; diagnostics go to standard error.  Exit codes: 0 success,
2 usage or configuration error, 3 file format error, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import sys
from pathlib import Path

import numpy as np

from qsi import experiments, io, pipeline, statistics
from qsi.config import RunConfig
from qsi.errors import ConfigurationError, GeometryError, QsiError
from qsi.simulator import TransmissionMask, iter_qsi_clusters

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DEGENERATE = 0, 2, 3, 4


def _result(command: str, **fields) -> None:
    parts = [f"command={command}"]
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    print("RESULT " + " ".join(parts), flush=True)


def parse_grid(text: str) -> list[float]:
    """Photon-number grid: ``a,b,c``, ``log:lo:hi:count`` or ``lin:lo:hi:count``."""
    text = text.strip()
    try:
        if text.startswith(("log:", "lin:")):
            kind, lo, hi, count = text.split(":")
            lo, hi, count = float(lo), float(hi), int(count)
            if count < 1 or not (0 < lo <= hi if kind == "log" else lo <= hi):
                raise ValueError(text)
            if kind == "log":
                return [float(x) for x in np.logspace(math.log10(lo), math.log10(hi), count)]
            return [float(x) for x in np.linspace(lo, hi, count)]
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse grid {text!r}") from exc
    if not vals or any(not math.isfinite(v) or v < 0 for v in vals):
        raise ConfigurationError(f"grid {text!r} must hold finite values >= 0")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse integer list {text!r}") from exc


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig.demo()


# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    count = cfg.clusters if args.clusters is None else args.clusters
    out = args.out or cfg.out_stack
    ref_out = args.ref or cfg.out_ref
    if not out:
        raise ConfigurationError("no output path: pass --out or set out_stack")
    if count < 0:
        raise ConfigurationError("--clusters must be >= 0")
    scene = cfg.build_scene()
    digest = scene.digest()
    timing = dict(exposure_us=scene.exposure_us, duty_cycle_us=scene.duty_cycle_us,
                  scene_digest=digest, seed=seed)
    io.write_frame_stack(iter_qsi_clusters(scene, count, seed, workers=args.workers), out, **timing)
    if ref_out:
        ref_scene = scene.with_mask(TransmissionMask.clear(scene.grid))
        io.write_frame_stack(iter_qsi_clusters(ref_scene, count, seed, workers=args.workers), ref_out, **timing)
    _result("simulate", clusters=count, frames=scene.cluster_frames, width=scene.grid.width,
            height=scene.grid.height, seed=seed, digest=digest.hex()[:16], out=out,
            ref=ref_out or "none")
    return EXIT_OK


def _reference_map(args, header, radius):
    if args.ref:
        ref_header = io.read_stack_header(args.ref)
        if ref_header.scene_digest != header.scene_digest:
            raise ConfigurationError("probe and reference stacks come from different setups (scene digest mismatch)")
        if (ref_header.width, ref_header.height) != (header.width, header.height):
            raise ConfigurationError("probe and reference stacks have different grids")
        return pipeline.variance_map(io.iter_frame_stack(args.ref), radius), "stack"
    if not args.config:
        raise ConfigurationError("no --ref given; an analytic reference needs --config with lo_profile = flat")
    cfg = RunConfig.load(args.config)
    if not cfg.flat_lo:
        raise ConfigurationError("no --ref given and the config does not declare a flat LO")
    scene = cfg.build_scene()
    if scene.digest() != header.scene_digest:
        raise ConfigurationError("config does not describe the setup of the input stack")
    pred = pipeline.predicted_variance_map(
        scene.probe.mean_photons_total, TransmissionMask.clear(scene.grid), scene.lo_mode, radius,
        scene.probe_modes,
    )
    return pred, "analytic"


def _default_rois(grid, cfg: RunConfig | None, radius: int):
    if cfg and cfg.roi_unblocked and cfg.roi_blocked:
        return (pipeline.parse_roi(cfg.roi_unblocked, grid, "unblocked"),
                pipeline.parse_roi(cfg.roi_blocked, grid, "blocked"))
    blocked = cfg.mask_blocked if cfg else "left"
    boundary = cfg.mask_boundary if cfg else None
    return pipeline.half_block_rois(grid, boundary, band=radius + 1, blocked=blocked)


def cmd_reconstruct(args) -> int:
    header = io.read_stack_header(args.input)
    if header.cluster_count == 0:
        raise ConfigurationError(f"{args.input} holds no clusters")
    radius = args.bin_radius
    cfg = RunConfig.load(args.config) if args.config else None
    probe = pipeline.variance_map(io.iter_frame_stack(args.input), radius)
    ref, ref_kind = _reference_map(args, header, radius)
    tmap = pipeline.transmission_map(probe, ref)
    meta = {"clusters": probe.cluster_count, "bin_radius": radius, "reference": ref_kind}
    if args.out_var:
        io.write_map(probe, args.out_var, args.format, meta)
    if args.out_trans:
        io.write_map(tmap, args.out_trans, args.format, meta)
    bright, dark = _default_rois(probe.grid, cfg, radius)
    v_bright, v_dark = probe.region_mean(bright), probe.region_mean(dark)
    t_bright = float(np.nanmean(np.where(bright.mask, tmap.t_est, np.nan)))
    t_dark = float(np.nanmean(np.where(dark.mask, tmap.t_est, np.nan)))
    _result("reconstruct", clusters=probe.cluster_count, bin_radius=radius, reference=ref_kind,
            v_bright=v_bright, v_dark=v_dark, contrast=statistics.contrast(v_bright, v_dark),
            t_bright=t_bright, t_dark=t_dark, excluded=int(tmap.excluded.sum()))
    return EXIT_OK


def cmd_snr_curve(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else None
    clusters = args.clusters if args.clusters is not None else (cfg.clusters if cfg else 600)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    dark = args.dark_std if args.dark_std is not None else (cfg.dark_std if cfg else 10.0)
    if clusters < 2:
        raise ConfigurationError("--clusters must be >= 2")
    settings = experiments.SweepSettings(
        clusters=clusters, replicates=args.replicates, size=args.size, tile_px=args.tile_px,
        dark_std=dark, seed=seed, workers=args.workers,
    )
    radii = _int_list(args.radii)
    for r in [args.bin_radius, *radii]:
        if 2 * r + 1 > args.tile_px:
            raise GeometryError(f"a radius-{r} disk does not fit in a {args.tile_px}-px tile")
    rows = []
    if args.strategy in ("gain", "both"):
        grid = parse_grid(args.n_grid) if args.n_grid else experiments.default_gain_grid(radii)
        rows += experiments.snr_sweep_gain(grid, args.bin_radius, settings)
    if args.strategy in ("area", "both"):
        rows += experiments.snr_sweep_area(radii, (args.anchor_n, args.anchor_radius), settings)
    columns = list(io.SNR_REPORT_COLUMNS) + ["snr_se", "bin_radius", "strategy"]
    io.write_report(rows, args.out, columns)
    errs = [abs(r["rel_err"]) for r in rows if math.isfinite(r["rel_err"])]
    _result("snr-curve", points=len(rows), clusters=clusters,
            max_rel_err=max(errs) if errs else float("nan"), out=args.out)
    return EXIT_OK


def cmd_compare_cdi(args) -> int:
    grid = sorted(set(parse_grid(args.n_grid)))
    rows = experiments.compare_cdi(grid, tuple(range(11)), args.dark_std, args.mc_frames, args.seed)
    columns = ["n_mean", "snr_qsi"] + [f"snr_cdi_d{d}" for d in range(11)] + ["snr_cdi_mc"]
    io.write_report(rows, args.out, columns)
    key = f"snr_cdi_d{args.dark_std:g}"
    if key in rows[0]:
        above = [r["n_mean"] for r in rows if r[key] > r["snr_qsi"]]
    else:
        above = [r["n_mean"] for r in rows if statistics.snr_cdi(r["n_mean"], 0, args.dark_std) > r["snr_qsi"]]
    _result("compare-cdi", points=len(rows), dark_std=float(args.dark_std),
            cdi_wins_from=min(above) if above else "none", out=args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    header = io.read_stack_header(args.input)
    if header.cluster_count == 0:
        raise ConfigurationError(f"{args.input} holds no clusters")
    half = min(header.width, header.height) // 2
    if args.max_radius > half:
        raise GeometryError(f"--max-radius {args.max_radius} exceeds the grid half-size {half}")
    lin_max = min(args.max_radius, pipeline.LINEAR_REGIME_MAX_RADIUS)
    radii = _int_list(args.radii) if args.radii else list(range(0, lin_max + 1))
    center = None
    if args.center:
        try:
            cx, cy = (float(x) for x in args.center.split(","))
        except ValueError as exc:
            raise ConfigurationError(f"bad --center {args.center!r}") from exc
        center = (cx, cy)
    scan, flag = [], False
    if args.max_radius > pipeline.LINEAR_REGIME_MAX_RADIUS:
        # even clusters calibrate, odd ones scan, so the two stay independent
        fit_part = itertools.islice(io.iter_frame_stack(args.input), 0, None, 2)
        cal = pipeline.calibrate(fit_part, radii, center)
        scan_radii = sorted(set(radii) | set(range(0, args.max_radius + 1, 2)) | {args.max_radius})
        scan_part = itertools.islice(io.iter_frame_stack(args.input), 1, None, 2)
        scan = pipeline.saturation_scan(scan_part, scan_radii, center)
        flag = pipeline.saturation_flag(cal, scan)
    else:
        cal = pipeline.calibrate(io.iter_frame_stack(args.input), radii, center)
    _write_calibration(args.out, cal, radii, scan, flag)
    _result("calibrate", slope=cal.slope, slope_ci=cal.slope_ci, intercept=cal.intercept,
            intercept_ci=cal.intercept_ci, n_pxl=cal.n_pxl, saturated=int(flag), out=args.out)
    return EXIT_OK


def _write_calibration(path, cal, radii, scan, flag) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key in ("slope", "slope_ci", "intercept", "intercept_ci", "n_pxl"):
            fh.write(f"# {key}={getattr(cal, key)!r}\n")
        fh.write(f"# saturation_flag={int(flag)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "radius", "area", "v", "v_fit"])
        for r, a, v in zip(radii, cal.areas_used, cal.variances):
            w.writerow(["fit", r, a, repr(v), repr(cal.predict(a))])
        for a, v in scan:
            w.writerow(["scan", "", a, repr(v), repr(cal.predict(a))])


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a probe stack (and optionally a reference)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--clusters", type=int)
    s.add_argument("--out")
    s.add_argument("--ref", help="also write an unobstructed reference stack here")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="variance and transmission maps from stacks")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--ref")
    s.add_argument("--config", help="needed for the analytic flat reference and custom ROIs")
    s.add_argument("--bin-radius", type=int, default=1)
    s.add_argument("--out-var")
    s.add_argument("--out-trans")
    s.add_argument("--format", choices=("csv", "pgm", "p2"), default="csv")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("snr-curve", help="Monte Carlo single-shot SNR against the opaque-object law")
    s.add_argument("--config")
    s.add_argument("--n-grid", help="photon numbers for the fixed-area sweep (default: 8 points in [0.2, 5])")
    s.add_argument("--clusters", type=int)
    s.add_argument("--bin-radius", type=int, default=6)
    s.add_argument("--strategy", choices=("gain", "area", "both"), default="both")
    s.add_argument("--radii", default="2..7", help="radii of the fixed-gain sweep")
    s.add_argument("--anchor-n", type=float, default=experiments.AREA_SWEEP_ANCHOR[0])
    s.add_argument("--anchor-radius", type=int, default=experiments.AREA_SWEEP_ANCHOR[1])
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--tile-px", type=int, default=16)
    s.add_argument("--dark-std", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_snr_curve)

    s = sub.add_parser("compare-cdi", help="QSI versus classical differential imaging")
    s.add_argument("--dark-std", type=float, default=10.0)
    s.add_argument("--n-grid", default="log:0.01:100:41")
    s.add_argument("--mc-frames", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare_cdi)

    s = sub.add_parser("calibrate", help="photons per pixel from the variance-versus-area slope")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--max-radius", type=int, default=10)
    s.add_argument("--radii", help="fit radii, e.g. 0..10 (default 0..min(10, max-radius))")
    s.add_argument("--center", help="x,y of the calibration disk (default grid center)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QsiError as exc:
        print(f"qsi {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (2, 3, 4) else EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"qsi {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
