"""Plain-text ``key = value`` run configuration.

Lines starting with ``#`` are comments.  Unknown keys are rejected, and the
scene built from a config goes through the same validation as any
:class:`~qsi.simulator.SceneSpec`.  Example::

    grid_width = 128
    grid_height = 128
    lo_profile = gaussian
    lo_waist_px = 30
    n_pxl = 0.1
    mask = half-plane
    dark_std = 10
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from qsi.errors import ConfigurationError
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

REQUIRED_KEYS = ("grid_width", "grid_height", "n_pxl")


@dataclass
class RunConfig:
    grid_width: int = 128
    grid_height: int = 128
    pixel_pitch: float = 13.0
    lo_profile: str = "gaussian"  # gaussian | flat
    lo_waist_px: float = 30.0
    lo_photons_per_pixel: float = 1e6  # at the LO peak
    probe_kind: str = "thermal"  # thermal | coherent | vacuum
    n_pxl: float = 0.1  # probe photons per pixel at the brightest pixel
    mode_count: int = 1
    probe_modes: str = "matched"  # matched | hermite-gauss | tiles
    tile_px: int = 16
    dark_std: float = 10.0
    cluster_frames: int = 6
    usable_indices: tuple[int, ...] = (1, 2, 3)
    exposure_us: float = 1.7
    duty_cycle_us: float = 544.0
    quantize: bool = False
    mask: str = "half-plane"  # clear | opaque | half-plane | path to PGM/CSV
    mask_blocked: str = "left"
    mask_boundary: int | None = None
    seed: int = 0
    clusters: int = 200
    bin_radius: int = 1
    roi_unblocked: str | None = None
    roi_blocked: str | None = None
    out_stack: str | None = None
    out_ref: str | None = None
    out_var: str | None = None
    out_trans: str | None = None
    base_dir: str = "."

    @classmethod
    def demo(cls) -> "RunConfig":
        """The bundled half-block demo configuration."""
        return cls(clusters=200)

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".") -> "RunConfig":
        known = {f.name: f for f in fields(cls) if f.name != "base_dir"}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or not key:
                raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
            if key not in known:
                raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _convert(key, val, known[key].type, lineno)
        missing = [k for k in REQUIRED_KEYS if k not in values]
        if missing:
            raise ConfigurationError(f"missing required keys: {', '.join(missing)}")
        cfg = cls(**values, base_dir=base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, str(path.parent))

    def replace(self, **changes) -> "RunConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.grid_width >= 1 and self.grid_height >= 1, "grid dimensions must be >= 1")
        need(self.lo_profile in ("gaussian", "flat"), f"lo_profile must be gaussian or flat, got {self.lo_profile!r}")
        need(self.probe_kind in ("thermal", "coherent", "vacuum"), f"bad probe_kind {self.probe_kind!r}")
        need(self.probe_modes in ("matched", "hermite-gauss", "tiles"), f"bad probe_modes {self.probe_modes!r}")
        need(math.isfinite(self.n_pxl) and self.n_pxl >= 0, "n_pxl must be >= 0")
        need(self.lo_photons_per_pixel > 0, "lo_photons_per_pixel must be > 0")
        need(self.lo_waist_px > 0, "lo_waist_px must be > 0")
        need(self.mode_count >= 1, "mode_count must be >= 1")
        need(self.clusters >= 0, "clusters must be >= 0")
        need(self.bin_radius >= 0, "bin_radius must be >= 0")
        need(self.mask_blocked in ("left", "right"), "mask_blocked must be left or right")
        if self.probe_modes == "matched":
            need(self.mode_count == 1, "matched probe_modes needs mode_count = 1")

    @property
    def flat_lo(self) -> bool:
        return self.lo_profile == "flat"

    def grid(self) -> PixelGrid:
        return PixelGrid(self.grid_width, self.grid_height, self.pixel_pitch)

    def load_mask(self, grid: PixelGrid | None = None) -> TransmissionMask:
        from qsi.io import read_mask

        grid = grid or self.grid()
        if self.mask == "clear":
            return TransmissionMask.clear(grid)
        if self.mask == "opaque":
            return TransmissionMask.opaque(grid)
        if self.mask == "half-plane":
            return TransmissionMask.half_plane(grid, self.mask_blocked, self.mask_boundary)
        path = Path(self.mask)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        if not path.exists():
            raise ConfigurationError(f"mask file not found: {path}")
        mask = read_mask(path, self.pixel_pitch)
        if mask.t.shape != grid.shape:
            raise ConfigurationError(f"mask is {mask.t.shape[::-1]} but the grid is {grid.shape[::-1]}")
        return TransmissionMask(grid, mask.t)

    def build_scene(self) -> SceneSpec:
        """The :class:`SceneSpec` this config describes."""
        grid = self.grid()
        if self.lo_profile == "flat":
            lo = make_flat_mode(grid)
        else:
            lo = make_gaussian_mode(grid, self.lo_waist_px)
        if self.probe_modes == "matched":
            modes = [lo]
        elif self.probe_modes == "tiles":
            modes = make_tiled_mode_family(grid, self.tile_px)
        else:
            modes = make_orthogonal_mode_family(grid, self.lo_waist_px, self.mode_count)
        if self.probe_modes == "tiles" and len(modes) != self.mode_count:
            raise ConfigurationError(
                f"tiles of {self.tile_px} px give {len(modes)} modes but mode_count = {self.mode_count}"
            )
        mean_intensity = np.sum([m.intensity for m in modes], axis=0) / len(modes)
        n_total = self.n_pxl / float(mean_intensity.max())
        if self.probe_kind == "vacuum" or n_total == 0:
            probe = ProbeSpec(0.0, len(modes), "vacuum" if len(modes) == 1 else "thermal")
        elif self.probe_kind == "coherent":
            probe = ProbeSpec.coherent(n_total)
        else:
            probe = ProbeSpec.thermal(n_total, len(modes))
        lo_photons = self.lo_photons_per_pixel / float(lo.intensity.max())
        return SceneSpec(
            grid, probe, modes, lo, lo_photons, self.load_mask(grid), NoiseModel(self.dark_std),
            self.cluster_frames, self.usable_indices, self.exposure_us, self.duty_cycle_us,
            self.quantize,
        )


def _convert(key, val, typ, lineno):
    typ = str(typ)
    try:
        if "tuple" in typ:
            return tuple(int(x) for x in val.replace(" ", "").split(",") if x)
        if val.lower() in ("none", "") and "None" in typ:
            return None
        if typ.startswith("bool"):
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ.startswith("int"):
            return int(val)
        if typ.startswith("float"):
            return float(val)
        return val
    except ValueError as exc:
        raise ConfigurationError(f"line {lineno}: bad value for {key}: {val!r}") from exc
