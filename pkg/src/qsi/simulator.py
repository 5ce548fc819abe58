"""Synthetic homodyne frame clusters for quadrature-noise shadow imaging.

The sampler works at the Gaussian-state level.  In every usable frame each
thermal probe mode k contributes one real quadrature value ``q_k`` drawn from
N(0, 2 n_k) (homodyne picks a single quadrature and a thermal state has no
preferred phase).  Per pixel the balanced detector sees

    n1 = N_LO/2 + sqrt(N_LO)/2 * (xi + sum_k sqrt(t) U_k q_k) + dark_1
    n2 = N_LO/2 - sqrt(N_LO)/2 * (xi + sum_k sqrt(t) U_k q_k) + dark_2

with ``N_LO = |alpha|^2 U_lo^2`` and independent vacuum noise ``xi ~ N(0, 1)``.
For real mode functions this reproduces the per-pixel and the binned
normalized variance exactly up to O(1/|alpha|^2).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from numpy.polynomial import hermite
from scipy import sparse

from qsi.errors import ConfigurationError, DomainError, GeometryError
from qsi.statistics import NoiseModel, ProbeKind, ProbeSpec

MAX_PIXELS = 2**26
MAX_FAMILY_MODES = 16
DEFAULT_PIXEL_PITCH_UM = 13.0


@dataclass(frozen=True)
class PixelGrid:
    width: int
    height: int
    pixel_pitch: float = DEFAULT_PIXEL_PITCH_UM  # micrometers

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise GeometryError("grid dimensions must be integers")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.width * self.height > MAX_PIXELS:
            raise GeometryError(f"grid {self.width}x{self.height} exceeds {MAX_PIXELS} pixels")
        if not self.pixel_pitch > 0:
            raise GeometryError("pixel_pitch must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        """(x, y) of the geometric center in pixel coordinates."""
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        y, x = np.mgrid[0 : self.height, 0 : self.width]
        return x.astype(np.float64), y.astype(np.float64)


@dataclass(frozen=True, eq=False)
class ModeFunction:
    """Real, L2-normalized spatial amplitude of one beam mode on a grid."""

    grid: PixelGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.float64)
        if amp.shape != self.grid.shape:
            raise GeometryError(f"amplitudes shape {amp.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(amp)):
            raise DomainError("mode amplitudes must be finite")
        norm = float(np.sum(amp * amp))
        if abs(norm - 1.0) > 1e-9:
            raise DomainError(f"mode is not L2-normalized (sum U^2 = {norm})")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, grid: PixelGrid, profile: np.ndarray) -> "ModeFunction":
        profile = np.asarray(profile, dtype=np.float64)
        norm = math.sqrt(float(np.sum(profile * profile)))
        if norm == 0.0:
            raise DomainError("cannot normalize an all-zero profile")
        return cls(grid, profile / norm)

    @property
    def intensity(self) -> np.ndarray:
        return self.amplitudes * self.amplitudes


@dataclass(frozen=True, eq=False)
class TransmissionMask:
    """Intensity transmittance t(x) in [0, 1] of the object, per pixel."""

    grid: PixelGrid
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != self.grid.shape:
            raise GeometryError(f"mask shape {t.shape} != grid {self.grid.shape}")
        bad = ~((t >= 0.0) & (t <= 1.0))
        if bad.any():
            rows, cols = np.nonzero(bad)
            raise DomainError(
                f"{bad.sum()} mask entries outside [0, 1], first at row {rows[0]}, col {cols[0]}"
            )
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def clear(cls, grid: PixelGrid) -> "TransmissionMask":
        return cls(grid, np.ones(grid.shape))

    @classmethod
    def opaque(cls, grid: PixelGrid) -> "TransmissionMask":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def half_plane(
        cls, grid: PixelGrid, blocked: str = "left", boundary: int | None = None
    ) -> "TransmissionMask":
        """Opaque half plane; ``boundary`` is the first column (or row) of the clear half."""
        t = np.ones(grid.shape)
        if blocked in ("left", "right"):
            b = grid.width // 2 if boundary is None else boundary
            if blocked == "left":
                t[:, :b] = 0.0
            else:
                t[:, b:] = 0.0
        elif blocked in ("top", "bottom"):
            b = grid.height // 2 if boundary is None else boundary
            if blocked == "top":
                t[:b, :] = 0.0
            else:
                t[b:, :] = 0.0
        else:
            raise DomainError(f"unknown half-plane side {blocked!r}")
        return cls(grid, t)


def make_gaussian_mode(
    grid: PixelGrid, waist_px: float, center: tuple[float, float] | None = None
) -> ModeFunction:
    """Gaussian amplitude ``exp(-r^2 / w^2)`` normalized over the grid.

    ``center`` is (x, y) in pixels and defaults to the grid center.
    """
    if not waist_px > 0:
        raise GeometryError(f"waist must be positive, got {waist_px}")
    if grid.size > 1 and waist_px > min(grid.width, grid.height) / 2:
        raise GeometryError(f"waist {waist_px} px does not fit a {grid.width}x{grid.height} grid")
    cx, cy = grid.center if center is None else center
    x, y = grid.coordinates()
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    return ModeFunction.normalized(grid, np.exp(-r2 / waist_px**2))


def make_flat_mode(grid: PixelGrid, support: np.ndarray | None = None) -> ModeFunction:
    """Uniform amplitude over ``support`` (boolean array), or over the whole grid."""
    profile = np.ones(grid.shape) if support is None else np.asarray(support, dtype=np.float64)
    return ModeFunction.normalized(grid, profile)


def _hg_orders(j: int) -> list[tuple[int, int]]:
    orders = []
    total = 0
    while len(orders) < j:
        for m in range(total, -1, -1):
            orders.append((m, total - m))
        total += 1
    return orders[:j]


def make_orthogonal_mode_family(
    grid: PixelGrid, waist_px: float, j: int, center: tuple[float, float] | None = None
) -> list[ModeFunction]:
    """The first j Hermite-Gauss modes, orthonormalized on the pixel grid.

    Modes are ordered by total order (00, 10, 01, 20, 11, 02, ...).  Sampling
    on a finite grid spoils exact orthogonality slightly, so the sampled
    profiles go through a Gram-Schmidt pass in that order; the first mode is
    therefore exactly :func:`make_gaussian_mode`.
    """
    if int(j) != j or not 1 <= j <= MAX_FAMILY_MODES:
        raise DomainError(f"j must be an integer in [1, {MAX_FAMILY_MODES}], got {j}")
    first = make_gaussian_mode(grid, waist_px, center)
    cx, cy = grid.center if center is None else center
    x, y = grid.coordinates()
    u = np.sqrt(2.0) * (x - cx) / waist_px
    v = np.sqrt(2.0) * (y - cy) / waist_px
    envelope = first.amplitudes
    basis = []
    for m, n in _hg_orders(j):
        cm = np.zeros(m + 1)
        cm[m] = 1.0
        cn = np.zeros(n + 1)
        cn[n] = 1.0
        basis.append((hermite.hermval(u, cm) * hermite.hermval(v, cn) * envelope).ravel())
    mat = np.array(basis).T
    q, r = np.linalg.qr(mat)
    if np.min(np.abs(np.diag(r))) < 1e-10:
        raise GeometryError("grid too coarse to hold that many distinct modes")
    q = q * np.sign(np.diag(r))
    modes = [first]
    for k in range(1, j):
        modes.append(ModeFunction.normalized(grid, q[:, k].reshape(grid.shape)))
    return modes


def make_tiled_mode_family(grid: PixelGrid, tile_px: int) -> list[ModeFunction]:
    """Flat modes on disjoint square tiles: a speckle field with independent coherence cells.

    Tiles are ordered row-major.  Both grid dimensions must be multiples of ``tile_px``.
    """
    if tile_px < 1 or grid.width % tile_px or grid.height % tile_px:
        raise GeometryError(f"tile {tile_px} px does not divide a {grid.width}x{grid.height} grid")
    modes = []
    for ty in range(grid.height // tile_px):
        for tx in range(grid.width // tile_px):
            support = np.zeros(grid.shape, dtype=bool)
            support[ty * tile_px : (ty + 1) * tile_px, tx * tile_px : (tx + 1) * tile_px] = True
            modes.append(make_flat_mode(grid, support))
    return modes


def tile_index_map(grid: PixelGrid, tile_px: int) -> np.ndarray:
    """Row-major tile number of every pixel, matching :func:`make_tiled_mode_family`."""
    y, x = np.mgrid[0 : grid.height, 0 : grid.width]
    return (y // tile_px) * (grid.width // tile_px) + x // tile_px


def mode_overlap(a: ModeFunction, b: ModeFunction) -> float:
    """Overlap ``|sum_x a(x) b(x)|`` of two normalized modes, in [0, 1]."""
    if a.grid != b.grid:
        raise GeometryError("modes live on different grids")
    return min(1.0, abs(float(np.sum(a.amplitudes * b.amplitudes))))


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Everything needed to synthesize frames: probe, LO, object, detector and timing."""

    grid: PixelGrid
    probe: ProbeSpec
    probe_modes: Sequence[ModeFunction]
    lo_mode: ModeFunction
    lo_photons: float
    mask: TransmissionMask
    noise: NoiseModel = field(default_factory=NoiseModel)
    cluster_frames: int = 6
    usable_indices: tuple[int, ...] = (1, 2, 3)
    exposure_us: float = 1.7
    duty_cycle_us: float = 544.0
    quantize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "probe_modes", tuple(self.probe_modes))
        object.__setattr__(self, "usable_indices", tuple(int(i) for i in self.usable_indices))
        if len(self.probe_modes) != self.probe.mode_count:
            raise ConfigurationError(
                f"{len(self.probe_modes)} probe modes given for mode_count={self.probe.mode_count}"
            )
        for m in (*self.probe_modes, self.lo_mode):
            if m.grid != self.grid:
                raise GeometryError("all modes must live on the scene grid")
        if self.mask.grid != self.grid:
            raise GeometryError("mask must live on the scene grid")
        if len(self.probe_modes) > 1:
            mat = self._mode_matrix
            gram = mat @ mat.T
            off = gram - np.diag(np.diag(gram))
            if np.max(np.abs(off)) >= 1e-6:
                raise ConfigurationError("probe modes are not mutually orthogonal")
        if not (math.isfinite(self.lo_photons) and self.lo_photons > 0):
            raise ConfigurationError("lo_photons must be positive")
        floor = 100.0 * max(1.0, self.probe.mean_photons_total)
        if self.lo_photons < floor:
            raise ConfigurationError(
                f"lo_photons={self.lo_photons} too weak: strong-LO regime needs >= {floor}"
            )
        if int(self.cluster_frames) != self.cluster_frames or not 1 <= self.cluster_frames <= 64:
            raise ConfigurationError("cluster_frames must be an integer in [1, 64]")
        if not self.usable_indices:
            raise ConfigurationError("usable_indices must not be empty")
        if len(set(self.usable_indices)) != len(self.usable_indices):
            raise ConfigurationError("usable_indices contains duplicates")
        if any(not 0 <= i < self.cluster_frames for i in self.usable_indices):
            raise ConfigurationError(
                f"usable_indices {self.usable_indices} outside [0, {self.cluster_frames})"
            )
        if not (self.exposure_us > 0 and self.duty_cycle_us > 0):
            raise ConfigurationError("exposure_us and duty_cycle_us must be positive")

    @cached_property
    def _mode_matrix(self) -> np.ndarray:
        return np.array([m.amplitudes.ravel() for m in self.probe_modes])

    @cached_property
    def lo_counts(self) -> np.ndarray:
        """Mean LO photons per pixel, ``N_LO(x) = |alpha|^2 U_lo(x)^2``."""
        return self.lo_photons * self.lo_mode.intensity

    @cached_property
    def _field_weights(self):
        """Rows ``sqrt(t) U_k`` flattened, one per probe mode; sparse for localized modes."""
        w = self._mode_matrix * np.sqrt(self.mask.t).ravel()[None, :]
        if w.shape[0] > 1 and np.count_nonzero(w) < 0.05 * w.size:
            return sparse.csr_array(w)
        return w

    def with_mask(self, mask: TransmissionMask) -> "SceneSpec":
        return SceneSpec(
            self.grid, self.probe, self.probe_modes, self.lo_mode, self.lo_photons, mask,
            self.noise, self.cluster_frames, self.usable_indices, self.exposure_us,
            self.duty_cycle_us, self.quantize,
        )

    def with_probe(self, probe: ProbeSpec) -> "SceneSpec":
        return SceneSpec(
            self.grid, probe, self.probe_modes, self.lo_mode, self.lo_photons, self.mask,
            self.noise, self.cluster_frames, self.usable_indices, self.exposure_us,
            self.duty_cycle_us, self.quantize,
        )

    def with_noise(self, noise: NoiseModel) -> "SceneSpec":
        return SceneSpec(
            self.grid, self.probe, self.probe_modes, self.lo_mode, self.lo_photons, self.mask,
            noise, self.cluster_frames, self.usable_indices, self.exposure_us,
            self.duty_cycle_us, self.quantize,
        )

    def digest(self) -> bytes:
        """SHA-256 of the optical setup, deliberately excluding the object mask.

        A probe stack and its unobstructed reference share this digest, which
        lets reconstruction refuse stacks taken with different setups.
        """
        h = hashlib.sha256()
        meta = {
            "grid": [self.grid.width, self.grid.height, self.grid.pixel_pitch],
            "probe": [self.probe.mean_photons_total, self.probe.mode_count, self.probe.kind.value],
            "lo_photons": self.lo_photons,
            "dark_std": self.noise.dark_std,
            "cluster_frames": self.cluster_frames,
            "usable": list(self.usable_indices),
            "timing": [self.exposure_us, self.duty_cycle_us],
            "quantize": self.quantize,
        }
        h.update(json.dumps(meta, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.lo_mode.amplitudes).tobytes())
        for m in self.probe_modes:
            h.update(np.ascontiguousarray(m.amplitudes).tobytes())
        return h.digest()


@dataclass(frozen=True, eq=False)
class FrameCluster:
    """One camera duty cycle.

    ``frames`` has shape (cluster_frames, 2, height, width): output beam 1 then
    beam 2 for every frame, as float32 counts.
    """

    frames: np.ndarray
    usable_indices: tuple[int, ...]
    cluster_id: int
    seed_tag: int

    def __post_init__(self):
        fr = np.asarray(self.frames)
        if fr.ndim != 4 or fr.shape[1] != 2:
            raise GeometryError(f"frames must have shape (F, 2, H, W), got {fr.shape}")
        if not np.all(np.isfinite(fr)):
            raise DomainError("frame counts must be finite")
        object.__setattr__(self, "usable_indices", tuple(int(i) for i in self.usable_indices))
        if any(not 0 <= i < fr.shape[0] for i in self.usable_indices):
            raise GeometryError("usable index outside the cluster")

    @property
    def n1(self) -> np.ndarray:
        return self.frames[:, 0]

    @property
    def n2(self) -> np.ndarray:
        return self.frames[:, 1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[2:]

    def usable(self) -> np.ndarray:
        """Usable frames only, shape (U, 2, H, W)."""
        return self.frames[list(self.usable_indices)]

    def __eq__(self, other):
        if not isinstance(other, FrameCluster):
            return NotImplemented
        return (
            self.usable_indices == other.usable_indices
            and self.cluster_id == other.cluster_id
            and self.seed_tag == other.seed_tag
            and self.frames.dtype == other.frames.dtype
            and np.array_equal(self.frames, other.frames)
        )


def _cluster_streams(seed: int, cluster_id: int, n: int):
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(cluster_id),))
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def sample_qsi_cluster(scene: SceneSpec, cluster_id: int, seed: int) -> FrameCluster:
    """Draw one cluster of homodyne frames.

    Thermal quadratures, vacuum noise and dark counts use separate RNG streams
    derived from ``(seed, cluster_id)``, so switching dark noise on or off
    leaves the optical part of the frames untouched.  Frames outside
    ``usable_indices`` carry LO and dark noise only.
    """
    q_rng, shot_rng, dark_rng = _cluster_streams(seed, cluster_id, 3)
    f = scene.cluster_frames
    p = scene.grid.size
    usable = np.zeros(f, dtype=bool)
    usable[list(scene.usable_indices)] = True

    xi = shot_rng.standard_normal((f, p))
    n_k = scene.probe.photons_per_mode
    q = q_rng.standard_normal((f, scene.probe.mode_count))
    if scene.probe.kind is ProbeKind.THERMAL and n_k > 0:
        q *= math.sqrt(2.0 * n_k)
        q[~usable] = 0.0
        xi[usable] += q[usable] @ scene._field_weights

    lo = scene.lo_counts.ravel()
    half = 0.5 * np.sqrt(lo) * xi
    n1 = 0.5 * lo + half
    n2 = 0.5 * lo - half
    if scene.noise.dark_std > 0:
        dark = dark_rng.normal(0.0, scene.noise.dark_std, (2, f, p))
        n1 += dark[0]
        n2 += dark[1]
    frames = np.stack([n1, n2], axis=1).reshape(f, 2, *scene.grid.shape)
    if scene.quantize:
        frames = np.rint(frames)
    return FrameCluster(frames.astype(np.float32), scene.usable_indices, int(cluster_id), int(seed))


def iter_qsi_clusters(
    scene: SceneSpec, count: int, seed: int, first_id: int = 0, workers: int = 1
) -> Iterator[FrameCluster]:
    """Lazily yield ``count`` clusters with consecutive ids, in id order.

    With ``workers > 1`` clusters are drawn on a thread pool; the output is
    identical to the sequential one because every cluster owns its streams.
    """
    ids = range(first_id, first_id + count)
    if workers <= 1:
        for cid in ids:
            yield sample_qsi_cluster(scene, cid, seed)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda cid: sample_qsi_cluster(scene, cid, seed), ids)


def sample_cdi_frames(scene: SceneSpec, n_frames: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Direct-detection frames for classical differential imaging.

    Mean counts per pixel are ``n_k U_k^2`` summed over modes, times ``t`` in
    the probe arm.  Coherent light gives Poisson counts.  Thermal light draws
    one exponential intensity per mode per frame (shared across the beam) and
    Poisson counts on top, so each pixel is Bose-Einstein distributed with
    variance ``mu (1 + mu)``.  Returns ``(probe_frames, reference_frames)``
    of shape (n_frames, height, width).
    """
    if scene.probe.kind is ProbeKind.VACUUM:
        raise DomainError("classical differential imaging needs a non-vacuum probe")
    if n_frames < 1:
        raise DomainError("n_frames must be >= 1")
    probe_rng, ref_rng, dark_rng = _cluster_streams(seed, 0, 3)
    weights = scene._mode_matrix**2 * scene.probe.photons_per_mode  # (K, P)
    t = scene.mask.t.ravel()

    def arm(rng, transmit):
        if scene.probe.kind is ProbeKind.COHERENT:
            mu = np.broadcast_to(weights.sum(axis=0) * transmit, (n_frames, weights.shape[1]))
        else:
            intensity = rng.exponential(1.0, (n_frames, weights.shape[0]))
            mu = (intensity @ weights) * transmit
        return rng.poisson(mu).astype(np.float64)

    probe = arm(probe_rng, t)
    ref = arm(ref_rng, 1.0)
    if scene.noise.dark_std > 0:
        dark = dark_rng.normal(0.0, scene.noise.dark_std, (2,) + probe.shape)
        probe += dark[0]
        ref += dark[1]
    shape = (n_frames,) + scene.grid.shape
    return probe.reshape(shape), ref.reshape(shape)
