"""Reconstruction chain: binning, normalized variance maps, transmission maps,
ROI statistics and photon-number calibration.

Counts are read as float32 from frame clusters and every statistic is
accumulated in float64.  Reductions run in a fixed order, so repeated runs on
the same clusters give bit-identical maps.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from qsi import statistics
from qsi.errors import ConfigurationError, DegenerateError, DomainError, GeometryError, StatisticsError
from qsi.simulator import FrameCluster, ModeFunction, PixelGrid, TransmissionMask

LINEAR_REGIME_MAX_RADIUS = 10
DEFAULT_GROUPS = 20
# clusters per radius spent on the calibration pilot
PILOT_PER_RADIUS = 5


# ---------------------------------------------------------------------------
# Disk binning
# ---------------------------------------------------------------------------
def disk_offsets(radius: int) -> np.ndarray:
    """All integer offsets (dy, dx) with dx^2 + dy^2 <= radius^2, row-major."""
    if int(radius) != radius or radius < 0:
        raise DomainError(f"binning radius must be a non-negative integer, got {radius}")
    r = int(radius)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx * dx + dy * dy <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1)


def disk_area(radius: int) -> int:
    """Number of pixels in a binning disk of the given radius (113 at radius 6)."""
    return len(disk_offsets(radius))


def bin_counts(frame: np.ndarray, radius: int) -> np.ndarray:
    """Replace every pixel by the sum over the Euclidean disk of ``radius`` around it.

    Works on the last two axes, so a stack of frames is binned in one call.
    Near the border only the in-grid part of the disk is summed (no padding,
    no renormalization).  Output is float64.
    """
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim < 2:
        raise GeometryError("bin_counts needs at least a 2-D array")
    h, w = a.shape[-2:]
    if int(radius) != radius or radius < 0:
        raise DomainError(f"binning radius must be a non-negative integer, got {radius}")
    r = int(radius)
    if r == 0:
        return a.copy()
    if r > min(h, w) / 2:
        raise GeometryError(f"binning radius {r} too large for a {w}x{h} grid")

    # csum[k] = sum of the zero-padded row up to (excluding) padded column k
    csum = np.zeros(a.shape[:-1] + (w + 2 * r + 1,))
    np.cumsum(a, axis=-1, out=csum[..., r + 1 : r + 1 + w])
    csum[..., r + 1 + w :] = csum[..., r + w : r + 1 + w]
    rows_sum = {}
    out = np.zeros_like(a)
    for dy in range(-r, r + 1):
        half = math.isqrt(r * r - dy * dy)
        if half not in rows_sum:
            rows_sum[half] = csum[..., r + half + 1 : r + half + 1 + w] - csum[..., r - half : r - half + w]
        rs = rows_sum[half]
        if dy >= 0:
            out[..., : h - dy, :] += rs[..., dy:, :]
        else:
            out[..., -dy:, :] += rs[..., : h + dy, :]
    return out


# ---------------------------------------------------------------------------
# Normalized variance maps
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class VarianceMap:
    """Cluster-averaged normalized variance ``<(N1 - N2)^2> / <N1 + N2>``.

    Pixels where some cluster had a non-positive mean sum are flagged in
    ``excluded`` and hold 1.0.  ``group_sums``/``group_counts`` keep the
    per-cluster maps summed in interleaved groups so that any statistic of
    the map can be given a jackknife error (see :meth:`jackknife`).
    """

    grid: PixelGrid
    v: np.ndarray
    cluster_count: int
    bin_radius: int
    mean_sum: np.ndarray
    excluded: np.ndarray
    v_se: np.ndarray | None = None
    group_sums: np.ndarray | None = field(default=None, repr=False)
    group_counts: np.ndarray | None = None

    def __post_init__(self):
        if self.cluster_count < 1:
            raise DomainError("a variance map needs at least one cluster")
        if not np.all(np.isfinite(self.v)):
            raise DomainError("variance map must be finite")

    def region_mean(self, roi: "Roi") -> float:
        sel = roi.mask & ~self.excluded
        if not sel.any():
            raise StatisticsError(f"ROI {roi.label!r} has no valid pixels")
        return float(np.mean(self.v[sel]))

    def leave_one_out(self) -> list[tuple[np.ndarray, int]]:
        """Maps recomputed with one cluster group left out, with their cluster counts."""
        if self.group_sums is None or len(self.group_counts) < 2:
            raise StatisticsError("variance map was built without cluster groups")
        total = self.v * self.cluster_count
        out = []
        for g_sum, g_n in zip(self.group_sums, self.group_counts):
            m = self.cluster_count - int(g_n)
            out.append(((total - g_sum) / m, m))
        return out

    def jackknife(self, statistic: Callable[[np.ndarray, int], float]) -> tuple[float, float]:
        """Delete-a-group jackknife: ``(statistic(v, M), standard error)``."""
        theta = statistic(self.v, self.cluster_count)
        reps = np.array([statistic(v, m) for v, m in self.leave_one_out()])
        g = len(reps)
        se = math.sqrt((g - 1) / g * float(np.sum((reps - reps.mean()) ** 2)))
        return float(theta), se


class VarianceAccumulator:
    """Streams clusters into per-radius normalized variance maps.

    Per cluster: bin n1 and n2 of every usable frame, form d = n1 - n2 and
    s = n1 + n2, take ``mean(d^2) / mean(s)`` pixel-wise; the map is the
    average of these per-cluster ratios.  ``mean_subtract`` replaces the raw
    second moment by the sample variance of d (off by default because the
    difference signal has zero mean).
    """

    def __init__(
        self,
        radii: Sequence[int] | int = 0,
        groups: int | None = DEFAULT_GROUPS,
        mean_subtract: bool = False,
    ):
        self.radii = [int(radii)] if np.isscalar(radii) else [int(r) for r in radii]
        for r in self.radii:
            disk_offsets(r)
        self.groups = groups
        self.mean_subtract = mean_subtract
        self.count = 0
        self._shape = None
        self._usable = None
        self._state = {}

    def _init(self, cluster: FrameCluster):
        self._shape = cluster.shape
        self._usable = cluster.usable_indices
        if self.mean_subtract and len(self._usable) < 2:
            raise ConfigurationError("mean-subtracted estimator needs >= 2 usable frames")
        g = 0 if not self.groups else int(self.groups)
        for r in self.radii:
            self._state[r] = {
                "v": np.zeros(self._shape),
                "v2": np.zeros(self._shape),
                "s": np.zeros(self._shape),
                "bad": np.zeros(self._shape, dtype=bool),
                "groups": np.zeros((g,) + self._shape) if g else None,
            }
        self._group_counts = np.zeros(g, dtype=np.int64)

    def add(self, cluster: FrameCluster) -> None:
        if self._shape is None:
            self._init(cluster)
        elif cluster.shape != self._shape:
            raise ConfigurationError("clusters do not share a grid")
        elif cluster.usable_indices != self._usable:
            raise ConfigurationError("clusters do not share usable frame indices")
        frames = cluster.usable()
        g = self.count % len(self._group_counts) if len(self._group_counts) else None
        for r in self.radii:
            binned = bin_counts(frames, r)
            d = binned[:, 0] - binned[:, 1]
            s = binned[:, 0] + binned[:, 1]
            if self.mean_subtract:
                num = np.var(d, axis=0, ddof=1)
            else:
                num = np.mean(d * d, axis=0)
            den = np.mean(s, axis=0)
            bad = den <= 0
            vc = np.divide(num, den, out=np.zeros_like(num), where=~bad)
            st = self._state[r]
            st["v"] += vc
            st["v2"] += vc * vc
            st["s"] += den
            st["bad"] |= bad
            if g is not None:
                st["groups"][g] += vc
        if g is not None:
            self._group_counts[g] += 1
        self.count += 1

    def extend(self, clusters: Iterable[FrameCluster]) -> "VarianceAccumulator":
        for c in clusters:
            self.add(c)
        return self

    def result(self, pixel_pitch: float | None = None) -> dict[int, VarianceMap]:
        if self.count == 0:
            raise DomainError("no clusters were accumulated")
        h, w = self._shape
        grid = PixelGrid(w, h) if pixel_pitch is None else PixelGrid(w, h, pixel_pitch)
        m = self.count
        maps = {}
        for r, st in self._state.items():
            v = st["v"] / m
            se = None
            if m > 1:
                var = np.maximum(st["v2"] / m - v * v, 0.0) * m / (m - 1)
                se = np.sqrt(var / m)
            bad = st["bad"].copy()
            v[bad] = 1.0
            groups = st["groups"]
            counts = None
            if groups is not None:
                used = self._group_counts > 0
                groups, counts = groups[used].copy(), self._group_counts[used].copy()
                groups[:, bad] = counts[:, None]
            maps[r] = VarianceMap(grid, v, m, r, st["s"] / m, bad, se, groups, counts)
        return maps


def variance_maps(
    clusters: Iterable[FrameCluster],
    radii: Sequence[int],
    groups: int | None = DEFAULT_GROUPS,
    mean_subtract: bool = False,
) -> dict[int, VarianceMap]:
    """One pass over the clusters, one :class:`VarianceMap` per binning radius."""
    return VarianceAccumulator(radii, groups, mean_subtract).extend(clusters).result()


def variance_map(
    clusters: Iterable[FrameCluster],
    radius: int = 0,
    groups: int | None = DEFAULT_GROUPS,
    mean_subtract: bool = False,
) -> VarianceMap:
    return variance_maps(clusters, [radius], groups, mean_subtract)[int(radius)]


def predicted_variance_map(
    n_th: float,
    mask: TransmissionMask,
    lo_mode: ModeFunction,
    radius: int,
    probe_modes: Sequence[ModeFunction] | None = None,
    lo_photons: float = 1.0,
) -> VarianceMap:
    """Noise-free binned normalized variance at every pixel.

    Same physics as :func:`qsi.statistics.binned_variance_prediction`,
    evaluated for all disk centers at once through :func:`bin_counts`.  Used
    as the analytic reference when no reference stack was recorded.
    """
    modes = [lo_mode] if probe_modes is None else list(probe_modes)
    amp_t = np.sqrt(mask.t)
    u2 = lo_mode.amplitudes
    den = bin_counts(u2 * u2, radius)
    num = np.zeros_like(den)
    for mode in modes:
        num += bin_counts(amp_t * mode.amplitudes * u2, radius) ** 2
    bad = den <= 0
    v = np.ones_like(den)
    np.divide(2.0 * (n_th / len(modes)) * num, den, out=v, where=~bad)
    v[~bad] += 1.0
    return VarianceMap(mask.grid, v, 1, int(radius), lo_photons * den, bad)


# ---------------------------------------------------------------------------
# Transmission maps
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class TransmissionMap:
    """Pixel-wise ``(V_probe - 1) / (V_ref - 1)``, unclamped; NaN where excluded."""

    grid: PixelGrid
    t_est: np.ndarray
    excluded: np.ndarray
    probe: VarianceMap
    reference: VarianceMap

    def clamped(self) -> np.ndarray:
        """Display copy limited to [0, 1]."""
        return np.clip(self.t_est, 0.0, 1.0)


def transmission_map(
    v_probe: VarianceMap, v_ref: VarianceMap, eps: float = statistics.DEFAULT_EPS
) -> TransmissionMap:
    if v_probe.v.shape != v_ref.v.shape:
        raise ConfigurationError("probe and reference maps have different grids")
    if v_probe.bin_radius != v_ref.bin_radius:
        raise ConfigurationError(
            f"binning radius mismatch: probe R={v_probe.bin_radius}, reference R={v_ref.bin_radius}"
        )
    ref_excess = v_ref.v - 1.0
    excluded = ~(ref_excess >= eps) | v_probe.excluded | v_ref.excluded
    t = np.full(v_probe.v.shape, np.nan)
    np.divide(v_probe.v - 1.0, ref_excess, out=t, where=~excluded)
    return TransmissionMap(v_probe.grid, t, excluded, v_probe, v_ref)


# ---------------------------------------------------------------------------
# Regions of interest
# ---------------------------------------------------------------------------
ROI_LABELS = ("blocked", "unblocked", "excluded")


@dataclass(eq=False)
class Roi:
    """A set of pixels, stored as a boolean mask of the grid shape."""

    mask: np.ndarray
    label: str = "unblocked"

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise GeometryError("ROI mask must be 2-D")
        if self.label not in ROI_LABELS:
            raise DomainError(f"ROI label must be one of {ROI_LABELS}, got {self.label!r}")
        if not self.mask.any():
            raise DomainError("ROI is empty")

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def circle(cls, grid: PixelGrid, cx: float, cy: float, radius: float, label="unblocked"):
        x, y = grid.coordinates()
        return cls((x - cx) ** 2 + (y - cy) ** 2 <= radius**2, label)

    @classmethod
    def annulus(cls, grid: PixelGrid, cx, cy, r_in, r_out, label="unblocked"):
        x, y = grid.coordinates()
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        return cls((r2 >= r_in**2) & (r2 <= r_out**2), label)

    @classmethod
    def rectangle(cls, grid: PixelGrid, x0: int, y0: int, x1: int, y1: int, label="unblocked"):
        """Half-open rectangle x0 <= x < x1, y0 <= y < y1."""
        if x0 < 0 or y0 < 0 or x1 > grid.width or y1 > grid.height:
            raise GeometryError(f"rectangle ({x0},{y0})-({x1},{y1}) leaves the grid")
        m = np.zeros(grid.shape, dtype=bool)
        m[y0:y1, x0:x1] = True
        return cls(m, label)

    @classmethod
    def from_pixels(cls, grid: PixelGrid, pixels: Iterable[tuple[int, int]], label="unblocked"):
        """ROI from explicit ``(row, col)`` pixels."""
        m = np.zeros(grid.shape, dtype=bool)
        for r, c in pixels:
            if not (0 <= r < grid.height and 0 <= c < grid.width):
                raise GeometryError(f"pixel ({r}, {c}) outside the grid")
            m[r, c] = True
        return cls(m, label)

    def intersect(self, other: "Roi", label: str | None = None) -> "Roi":
        return Roi(self.mask & other.mask, label or self.label)

    def minus(self, other: "Roi", label: str | None = None) -> "Roi":
        return Roi(self.mask & ~other.mask, label or self.label)

    def relabel(self, label: str) -> "Roi":
        return Roi(self.mask, label)


def parse_roi(descriptor: str, grid: PixelGrid, label: str = "unblocked") -> Roi:
    """Build an ROI from text such as ``circle:64,64,30 & rect:70,0,128,128``.

    Shapes: ``circle:cx,cy,r``, ``annulus:cx,cy,r_in,r_out`` and
    ``rect:x0,y0,x1,y1``; ``&`` intersects.
    """
    parts = [p.strip() for p in descriptor.split("&")]
    result = None
    for part in parts:
        kind, _, args = part.partition(":")
        try:
            nums = [float(a) for a in args.split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"bad ROI numbers in {part!r}") from exc
        kind = kind.strip().lower()
        if kind == "circle" and len(nums) == 3:
            roi = Roi.circle(grid, *nums, label=label)
        elif kind == "annulus" and len(nums) == 4:
            roi = Roi.annulus(grid, *nums, label=label)
        elif kind == "rect" and len(nums) == 4:
            roi = Roi.rectangle(grid, *(int(n) for n in nums), label=label)
        else:
            raise ConfigurationError(f"cannot parse ROI component {part!r}")
        result = roi if result is None else result.intersect(roi)
    return result


def half_block_rois(
    grid: PixelGrid,
    boundary: int | None = None,
    center: tuple[float, float] | None = None,
    radius: float | None = None,
    band: float = 0.0,
    blocked: str = "left",
) -> tuple[Roi, Roi]:
    """(unblocked, blocked) halves of a central circle, minus a band around the edge.

    Mimics the analysis region of a half-blocked beam: the circle keeps only
    the well-overlapped center and pixels within ``band`` columns of the
    block boundary are dropped.
    """
    b = grid.width // 2 if boundary is None else boundary
    cx, cy = grid.center if center is None else center
    rad = min(grid.width, grid.height) / 4 if radius is None else radius
    circ = Roi.circle(grid, cx, cy, rad)
    x, _ = grid.coordinates()
    left = x < b - band
    right = x >= b + band
    blocked_side, clear_side = (left, right) if blocked == "left" else (right, left)
    return Roi(circ.mask & clear_side, "unblocked"), Roi(circ.mask & blocked_side, "blocked")


def _map_values(map_like) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(map_like, VarianceMap):
        return map_like.v, map_like.excluded
    if isinstance(map_like, TransmissionMap):
        return map_like.t_est, map_like.excluded
    arr = np.asarray(map_like, dtype=np.float64)
    return arr, ~np.isfinite(arr)


def roi_stats(map_like, roi: Roi) -> tuple[float, float, int]:
    """(spatial mean, spatial sample variance, pixel count) of valid pixels in the ROI."""
    values, excluded = _map_values(map_like)
    if roi.mask.shape != values.shape:
        raise GeometryError("ROI and map have different shapes")
    vals = values[roi.mask & ~excluded]
    if vals.size < 2:
        raise StatisticsError(f"ROI {roi.label!r} has {vals.size} valid pixels, need >= 2")
    return float(np.mean(vals)), float(np.var(vals, ddof=1)), int(vals.size)


def roi_snr(map_like, roi_unblocked: Roi, roi_blocked: Roi, m: int) -> float:
    """Single-shot-equivalent SNR of an M-cluster map between two ROIs.

    ``(S_u - S_b) / (sqrt(dS_u^2 + dS_b^2) sqrt(M))`` with S the spatial mean
    and dS^2 the spatial variance of the map over each ROI.  The map may be a
    transmission map, a variance map or a plain array.
    """
    if int(m) != m or m < 1:
        raise DomainError(f"M must be an integer >= 1, got {m}")
    if (roi_unblocked.mask & roi_blocked.mask).any():
        raise DomainError("ROIs overlap")
    su, vu, _ = roi_stats(map_like, roi_unblocked)
    sb, vb, _ = roi_stats(map_like, roi_blocked)
    num = su - sb
    den = math.sqrt(vu + vb)
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise DegenerateError("both ROIs have zero spatial variance")
    return num / (den * math.sqrt(m))


def roi_snr_with_error(vmap: VarianceMap, roi_unblocked: Roi, roi_blocked: Roi) -> tuple[float, float]:
    """:func:`roi_snr` of a variance map with its delete-a-group jackknife error."""
    excluded = vmap.excluded

    def stat(v, m):
        return roi_snr(np.where(excluded, np.nan, v), roi_unblocked, roi_blocked, m)

    return vmap.jackknife(stat)


def roi_transmission(v_probe: VarianceMap, v_ref: VarianceMap, roi: Roi) -> tuple[float, float]:
    """ROI mean of the transmission map with a paired jackknife error.

    Both maps must come from the same number of clusters, grouped alike, as
    when probe and reference stacks share a seed lineage.
    """
    if v_probe.cluster_count != v_ref.cluster_count or v_probe.group_counts is None or v_ref.group_counts is None:
        raise StatisticsError("paired jackknife needs grouped maps with equal cluster counts")
    if not np.array_equal(v_probe.group_counts, v_ref.group_counts):
        raise StatisticsError("probe and reference maps are grouped differently")

    def stat(vp, vr):
        tm = transmission_map(replace(v_probe, v=vp), replace(v_ref, v=vr))
        return roi_stats(tm, roi)[0]

    theta = stat(v_probe.v, v_ref.v)
    reps = np.array(
        [stat(p, r) for (p, _), (r, _) in zip(v_probe.leave_one_out(), v_ref.leave_one_out())]
    )
    g = len(reps)
    return theta, math.sqrt((g - 1) / g * float(np.sum((reps - reps.mean()) ** 2)))


def contrast_from_map(vmap: VarianceMap, roi_bright: Roi, roi_dark: Roi) -> float:
    return statistics.contrast(vmap.region_mean(roi_bright), vmap.region_mean(roi_dark))


# ---------------------------------------------------------------------------
# Calibration from the variance-versus-area law
# ---------------------------------------------------------------------------
@dataclass
class CalibrationResult:
    slope: float
    intercept: float
    slope_ci: float
    intercept_ci: float
    n_pxl: float
    areas_used: list[int]
    variances: list[float] = field(default_factory=list)
    saturation_j_estimate: float | None = None

    def __post_init__(self):
        self.n_pxl = self.slope / 2.0

    def predict(self, area: float) -> float:
        return self.slope * area + self.intercept


def _center_pixel(shape, center):
    h, w = shape
    if center is None:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    else:
        cx, cy = center
    col, row = int(round(cx)), int(round(cy))
    if not (0 <= row < h and 0 <= col < w):
        raise GeometryError(f"center ({cx}, {cy}) outside the grid")
    return row, col


def disk_variance_curve(
    clusters: Iterable[FrameCluster],
    radii: Sequence[int],
    center: tuple[float, float] | None = None,
    split: bool = False,
    shares: Sequence[float] | None = None,
    floor: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized variance of disk-summed counts at one center, for each radius.

    Returns ``(areas, V, V_se)``; areas count in-grid pixels of each disk and
    V is averaged over clusters exactly as in :class:`VarianceAccumulator`.
    With ``split`` every cluster feeds a single radius, so the points of the
    curve are statistically independent.  Clusters are dealt out in
    proportion to ``shares`` (equal by default): each goes to the radius
    furthest behind its quota, once every radius holds ``floor`` clusters.
    """
    radii = [int(r) for r in radii]
    k = len(radii)
    quota = np.full(k, 1.0 / k) if shares is None else np.asarray(shares, dtype=np.float64)
    if quota.shape != (k,) or np.any(quota <= 0):
        raise DomainError("shares must be positive, one per radius")
    quota = quota / quota.sum()
    weights = None
    per_cluster = [[] for _ in radii]
    for count, cluster in enumerate(clusters):
        if weights is None:
            h, w = cluster.shape
            row, col = _center_pixel((h, w), center)
            weights = np.zeros((len(radii), h * w))
            for i, r in enumerate(radii):
                off = disk_offsets(r)
                rr, cc = row + off[:, 0], col + off[:, 1]
                keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                weights[i, rr[keep] * w + cc[keep]] = 1.0
            usable = cluster.usable_indices
        elif cluster.usable_indices != usable or cluster.shape != (h, w):
            raise ConfigurationError("clusters do not share geometry")
        if split:
            held = np.array([len(p) for p in per_cluster])
            if held.min() < floor:
                idx = [int(np.argmin(held))]
            else:
                idx = [int(np.argmax(quota * (count + 1) - held))]
        else:
            idx = range(k)
        fr = cluster.usable().reshape(-1, h * w).astype(np.float64)
        sums = (fr @ weights[idx].T).reshape(-1, 2, len(idx))
        d = sums[:, 0] - sums[:, 1]
        s = sums[:, 0] + sums[:, 1]
        den = s.mean(axis=0)
        if np.any(den <= 0):
            raise DegenerateError("non-positive mean sum in calibration disk")
        for i, val in zip(idx, (d * d).mean(axis=0) / den):
            per_cluster[i].append(val)
    if weights is None:
        raise DomainError("no clusters given")
    if any(not vals for vals in per_cluster):
        raise StatisticsError(f"split calibration needs at least {k} clusters")
    v = np.array([np.mean(vals) for vals in per_cluster])
    se = np.array(
        [np.std(vals, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.nan for vals in per_cluster]
    )
    areas = weights.sum(axis=1)
    return areas, v, se


def fit_variance_area(areas: Sequence[float], variances: Sequence[float]) -> CalibrationResult:
    """Ordinary least squares ``V = slope * a + intercept`` with 1-sigma errors."""
    areas = np.asarray(areas, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if len(areas) < 3:
        raise StatisticsError("calibration fit needs at least 3 radii")
    fit = stats.linregress(areas, variances)
    return CalibrationResult(
        float(fit.slope), float(fit.intercept), float(fit.stderr), float(fit.intercept_stderr),
        float(fit.slope) / 2.0, [int(a) for a in areas], [float(x) for x in variances],
    )


def calibrate(
    clusters: Iterable[FrameCluster],
    radii: Sequence[int],
    center: tuple[float, float] | None = None,
    split: bool = True,
) -> CalibrationResult:
    """Fit the linear variance-versus-area law at ``center`` to extract photons per pixel.

    With ``split`` (the default) each cluster serves a single radius.  Reusing
    every cluster at every radius correlates the points through the common
    thermal fluctuation, and the OLS errors then understate the slope
    uncertainty several-fold.  A short pilot of ``PILOT_PER_RADIUS`` clusters
    per radius, discarded afterwards, sets each radius's share of the rest in
    proportion to its expected ``V^2``; a cluster's V scatters in proportion
    to V, so the points end up with about equal errors, as equal-weight least
    squares assumes.  No radius gets fewer than ``PILOT_PER_RADIUS`` clusters,
    which matters only when the largest disk is far brighter than the smallest.
    """
    radii = [int(r) for r in radii]
    if len(radii) < 3:
        raise StatisticsError("calibration fit needs at least 3 radii")
    if radii != sorted(radii) or len(set(radii)) != len(radii):
        raise DomainError("radii must be strictly ascending")
    if radii[0] < 0 or radii[-1] > LINEAR_REGIME_MAX_RADIUS:
        raise DomainError(f"calibration radii must lie in [0, {LINEAR_REGIME_MAX_RADIUS}]")
    if not split:
        areas, v, _ = disk_variance_curve(clusters, radii, center)
        return fit_variance_area(areas, v)
    stream = iter(clusters)
    pilot = list(itertools.islice(stream, PILOT_PER_RADIUS * len(radii)))
    if len(pilot) < PILOT_PER_RADIUS * len(radii):
        raise StatisticsError(f"split calibration needs more than {PILOT_PER_RADIUS * len(radii)} clusters")
    areas, v, _ = disk_variance_curve(pilot, radii, center)
    guess = fit_variance_area(areas, v)
    expected = np.maximum(guess.slope * areas + guess.intercept, 1.0)
    areas, v, _ = disk_variance_curve(stream, radii, center, split=True, shares=expected**2, floor=PILOT_PER_RADIUS)
    return fit_variance_area(areas, v)


def saturation_scan(
    clusters: Iterable[FrameCluster],
    radii: Sequence[int],
    center: tuple[float, float] | None = None,
) -> list[tuple[int, float]]:
    """Measured (area, V) pairs out to large radii, where multimode saturation shows."""
    areas, v, _ = disk_variance_curve(clusters, radii, center)
    return [(int(a), float(x)) for a, x in zip(areas, v)]


def saturation_flag(cal: CalibrationResult, scan: Sequence[tuple[float, float]], n_sigma: float = 3.0) -> bool:
    """True when the largest-area point falls below the linear law by more than n_sigma."""
    area, v = max(scan, key=lambda p: p[0])
    pred = cal.predict(area)
    sigma = math.hypot(area * cal.slope_ci, cal.intercept_ci)
    return pred - v > n_sigma * sigma


def estimate_mode_count(v_saturated: float, n_total: float) -> float:
    """Invert ``V = 1 + 2 n_total / j`` for the number of equally populated modes."""
    excess = v_saturated - 1.0
    if not excess > 0:
        raise DegenerateError("saturated variance shows no thermal excess")
    return 2.0 * n_total / excess


# ---------------------------------------------------------------------------
# Classical differential imaging benchmark
# ---------------------------------------------------------------------------
def differential_snr(probe_frames: np.ndarray, ref_frames: np.ndarray, region=None) -> float:
    """Per-pixel intensity-difference SNR over frames, averaged over ``region``.

    ``(<S_ref> - <S_probe>) / sqrt(Var S_ref + Var S_probe)`` with moments taken
    across the frame axis.
    """
    p = np.asarray(probe_frames, dtype=np.float64)
    r = np.asarray(ref_frames, dtype=np.float64)
    if p.shape != r.shape or p.shape[0] < 2:
        raise StatisticsError("need matching probe/reference stacks with >= 2 frames")
    num = r.mean(axis=0) - p.mean(axis=0)
    den = np.sqrt(r.var(axis=0, ddof=1) + p.var(axis=0, ddof=1))
    snr = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    if region is not None:
        snr = snr[np.asarray(region, dtype=bool)]
    return float(np.mean(snr))
