"""Closed-form noise statistics of quadrature-noise shadow imaging.

All variances are in shot-noise units: a coherent state (or vacuum) measured
with a strong local oscillator has normalized variance 1.  Transmittances are
intensity transmittances in [0, 1]; the field amplitude behind the object is
``sqrt(t)`` times the incident amplitude.

Every function here is pure and works on plain floats.  These are the exact
reference values the Monte Carlo machinery in :mod:`qsi.simulator` and
:mod:`qsi.pipeline` is checked against.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from qsi.errors import DegenerateError, DomainError

DEFAULT_EPS = 1e-9


class ProbeKind(str, enum.Enum):
    THERMAL = "thermal"
    COHERENT = "coherent"
    VACUUM = "vacuum"


class Method(str, enum.Enum):
    QSI = "qsi"
    CDI = "cdi"


@dataclass(frozen=True)
class ProbeSpec:
    """Photon statistics of the probe beam.

    ``mean_photons_total`` counts photons per frame in the whole beam, shared
    equally among ``mode_count`` thermal modes.  ``squeeze_param`` is the
    parametric gain parameter r of a four-wave-mixing source, for which the
    mean photon number is sinh(r)**2.
    """

    mean_photons_total: float
    mode_count: int = 1
    kind: ProbeKind = ProbeKind.THERMAL
    squeeze_param: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProbeKind(self.kind))
        n = self.mean_photons_total
        if not math.isfinite(n) or n < 0:
            raise DomainError(f"mean_photons_total must be finite and >= 0, got {n}")
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise DomainError(f"mode_count must be an integer >= 1, got {self.mode_count}")
        if self.kind is ProbeKind.VACUUM and n != 0:
            raise DomainError("a vacuum probe carries no photons")
        if self.squeeze_param is not None:
            r = self.squeeze_param
            if not math.isfinite(r) or r < 0:
                raise DomainError(f"squeeze_param must be >= 0, got {r}")
            if self.kind is ProbeKind.THERMAL:
                expected = fwm_mean_photons(r)
                if abs(n - expected) > 1e-12 * max(abs(expected), 1e-300):
                    raise DomainError(
                        f"mean_photons_total={n} disagrees with sinh^2({r})={expected}"
                    )

    @classmethod
    def thermal(cls, mean_photons_total: float, mode_count: int = 1) -> "ProbeSpec":
        return cls(float(mean_photons_total), mode_count, ProbeKind.THERMAL)

    @classmethod
    def coherent(cls, mean_photons_total: float) -> "ProbeSpec":
        return cls(float(mean_photons_total), 1, ProbeKind.COHERENT)

    @classmethod
    def vacuum(cls) -> "ProbeSpec":
        return cls(0.0, 1, ProbeKind.VACUUM)

    @classmethod
    def from_gain(cls, r: float, mode_count: int = 1) -> "ProbeSpec":
        """Thermal output of unseeded four-wave mixing with gain parameter r."""
        return cls(fwm_mean_photons(r), mode_count, ProbeKind.THERMAL, float(r))

    @property
    def photons_per_mode(self) -> float:
        return self.mean_photons_total / self.mode_count


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean detector dark noise, standard deviation in counts per pixel per frame."""

    dark_std: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.dark_std) or self.dark_std < 0:
            raise DomainError(f"dark_std must be finite and >= 0, got {self.dark_std}")


@dataclass(frozen=True)
class SnrPoint:
    mean_photons: float
    transmittance: float
    snr: float
    method: Method

    @classmethod
    def evaluate(cls, method, mean_photons, transmittance, dark_std=0.0) -> "SnrPoint":
        method = Method(method)
        if method is Method.QSI:
            snr = snr_qsi(mean_photons, transmittance)
        else:
            snr = snr_cdi(mean_photons, transmittance, dark_std)
        return cls(mean_photons, transmittance, snr, method)


def _check_nonneg(name, value):
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {value}")


def _check_unit(name, value):
    if not (0.0 <= value <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def normalized_variance(n_th: float, t: float, overlap: float = 1.0) -> float:
    """Per-pixel normalized variance ``1 + 2 n t O``.

    ``n_th`` is the thermal photon number reaching the pixel, ``t`` the
    intensity transmittance there and ``overlap`` the probe/LO mode overlap.
    """
    _check_nonneg("n_th", n_th)
    _check_unit("t", t)
    _check_unit("overlap", overlap)
    return 1.0 + 2.0 * n_th * t * overlap


def snr_qsi(n_th: float, t: float) -> float:
    """Single-shot SNR of thermal-probe QSI between a region of transmittance t and a clear one."""
    _check_nonneg("n_th", n_th)
    _check_unit("t", t)
    num = 2.0 * (1.0 - t) * n_th
    den = math.sqrt(4.0 + 8.0 * n_th**2 * (1.0 + t**2) + 8.0 * n_th * (1.0 + t))
    return num / den


def snr_qsi_opaque(n: float) -> float:
    """QSI SNR for a completely opaque object, ``2n / sqrt(2 + 2 (1 + 2n)^2)``."""
    _check_nonneg("n", n)
    return 2.0 * n / math.sqrt(2.0 + 2.0 * (1.0 + 2.0 * n) ** 2)


def snr_cdi(n_coh: float, t: float, dark_std: float = 0.0) -> float:
    """Single-shot SNR of classical differential imaging with a coherent probe.

    Two detector readouts each contribute ``dark_std**2`` of dark variance.
    The 0/0 case (no photons, noiseless detector) is defined as 0.
    """
    _check_nonneg("n_coh", n_coh)
    _check_unit("t", t)
    _check_nonneg("dark_std", dark_std)
    den2 = n_coh * (1.0 + t) + 2.0 * dark_std**2
    if den2 == 0.0:
        return 0.0
    return (1.0 - t) * n_coh / math.sqrt(den2)


def transmission_from_variance(v_probe: float, v_ref: float, eps: float = DEFAULT_EPS) -> float:
    """Intensity transmittance ``(v_probe - 1) / (v_ref - 1)``.

    The result is not clamped: noisy estimates legitimately leave [0, 1].
    """
    if not v_ref - 1.0 > eps:
        raise DegenerateError(
            f"reference variance {v_ref} carries no thermal excess (needs > 1 + {eps})"
        )
    return (v_probe - 1.0) / (v_ref - 1.0)


def contrast(v_bright: float, v_dark: float, eps: float = DEFAULT_EPS) -> float:
    """Michelson contrast of the thermal excess between bright and dark regions."""
    eb, ed = v_bright - 1.0, v_dark - 1.0
    den = eb + ed
    if not abs(den) > eps:
        raise DegenerateError(f"contrast undefined: excess sum {den} below {eps}")
    return (eb - ed) / den


def _region_index(region, shape):
    arr = np.asarray(region)
    if arr.dtype == bool:
        if arr.shape != shape:
            raise DomainError(f"region mask shape {arr.shape} does not match grid {shape}")
        return arr
    idx = np.zeros(shape, dtype=bool)
    pts = np.asarray(list(region), dtype=np.int64).reshape(-1, 2)
    if pts.size and (
        (pts < 0).any() or (pts[:, 0] >= shape[0]).any() or (pts[:, 1] >= shape[1]).any()
    ):
        raise DomainError("region has pixels outside the grid")
    idx[pts[:, 0], pts[:, 1]] = True
    return idx


def binned_variance_prediction(
    n_th: float,
    mask,
    lo_mode,
    region,
    probe_modes: Sequence | None = None,
) -> float:
    """Normalized variance of counts summed over ``region``.

    ``mask`` and the modes are objects exposing ``.t`` and ``.amplitudes``
    arrays (see :mod:`qsi.simulator`).  ``region`` is a boolean array of the
    grid shape or an iterable of ``(row, col)`` pixels.  Without
    ``probe_modes`` the probe is taken to be mode matched to the LO; with
    several probe modes ``n_th`` is shared equally among them and their
    contributions add::

        V = 1 + 2 sum_k n_k (sum_S sqrt(t) U_k U_lo)^2 / sum_S U_lo^2
    """
    _check_nonneg("n_th", n_th)
    u2 = np.asarray(lo_mode.amplitudes, dtype=np.float64)
    sel = _region_index(region, u2.shape)
    if not sel.any():
        raise DomainError("region is empty")
    modes = [lo_mode] if probe_modes is None else list(probe_modes)
    if not modes:
        raise DomainError("at least one probe mode is required")
    amp_t = np.sqrt(np.asarray(mask.t, dtype=np.float64))[sel]
    lo = u2[sel]
    den = float(np.sum(lo * lo))
    if den == 0.0:
        raise DegenerateError("local oscillator carries no power in the region")
    n_k = n_th / len(modes)
    excess = 0.0
    for mode in modes:
        proj = float(np.sum(amp_t * np.asarray(mode.amplitudes)[sel] * lo))
        excess += n_k * proj * proj
    return 1.0 + 2.0 * excess / den


def multimode_variance(n_total: float, j: int) -> float:
    """Saturated variance ``1 + 2 n_total / j`` for j equally populated thermal modes."""
    _check_nonneg("n_total", n_total)
    if int(j) != j or j < 1:
        raise DomainError(f"j must be an integer >= 1, got {j}")
    return 1.0 + 2.0 * n_total / j


def variance_of_variance_single_shot(sigma2: float) -> float:
    """Variance of X**2 for zero-mean Gaussian X of variance sigma2: 3 s^2 - s^2 = 2 s^2."""
    _check_nonneg("sigma2", sigma2)
    return 2.0 * sigma2 * sigma2


def qsi_noise_denominator(n: float, t: float) -> float:
    """``sqrt(VarVar(1 + 2n) + VarVar(1 + 2nt))``: clear vs transmitting region noise."""
    _check_nonneg("n", n)
    _check_unit("t", t)
    return math.sqrt(
        variance_of_variance_single_shot(1.0 + 2.0 * n)
        + variance_of_variance_single_shot(1.0 + 2.0 * n * t)
    )


def fwm_mean_photons(r: float) -> float:
    """Mean photon number sinh(r)**2 of one arm of unseeded four-wave mixing."""
    _check_nonneg("r", r)
    return math.sinh(r) ** 2


def fwm_gain_parameter(n: float) -> float:
    """Inverse of :func:`fwm_mean_photons`."""
    _check_nonneg("n", n)
    return math.asinh(math.sqrt(n))


def thermal_count_variance(mean: float) -> float:
    """Bose-Einstein photon-count variance ``n (1 + n)``."""
    _check_nonneg("mean", mean)
    return mean * (1.0 + mean)


def snr_curve(method, photons: Iterable[float], t: float = 0.0, dark_std: float = 0.0):
    """Evaluate an SNR formula over a photon-number grid, returning ``SnrPoint`` s."""
    return [SnrPoint.evaluate(method, float(n), t, dark_std) for n in photons]
