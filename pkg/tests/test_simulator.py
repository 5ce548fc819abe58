import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsi import scenes
from qsi.errors import ConfigurationError, DomainError, GeometryError
from qsi.statistics import NoiseModel, ProbeSpec
from qsi.simulator import (
    FrameCluster,
    ModeFunction,
    PixelGrid,
    SceneSpec,
    TransmissionMask,
    iter_qsi_clusters,
    make_flat_mode,
    make_gaussian_mode,
    make_orthogonal_mode_family,
    make_tiled_mode_family,
    mode_overlap,
    sample_cdi_frames,
    sample_qsi_cluster,
)


def pixel_scene(n_pxl=0.1, t=1.0, dark=0.0, size=8, frames=64, lo_pp=1e6, kind="thermal"):
    """Flat grid of one-pixel thermal modes: every pixel fluctuates on its own."""
    grid = PixelGrid(size, size)
    modes = make_tiled_mode_family(grid, 1) if kind == "thermal" else [make_flat_mode(grid)]
    if kind == "vacuum":
        probe = ProbeSpec.vacuum()
    else:
        probe = ProbeSpec.thermal(n_pxl * grid.size, len(modes))
    return SceneSpec(
        grid, probe, modes, make_flat_mode(grid), lo_pp * grid.size,
        TransmissionMask(grid, np.full(grid.shape, t)), NoiseModel(dark),
        cluster_frames=frames, usable_indices=tuple(range(frames)),
    )


# --- grids, modes and masks -------------------------------------------------
def test_pixel_grid_guards():
    with pytest.raises(GeometryError):
        PixelGrid(0, 3)
    with pytest.raises(GeometryError):
        PixelGrid(2**13 + 1, 2**13)
    g = PixelGrid(4, 3)
    assert g.shape == (3, 4) and g.size == 12 and g.pixel_pitch == 13.0


def test_gaussian_mode_examples():
    one = make_gaussian_mode(PixelGrid(1, 1), 0.3)
    assert one.amplitudes[0, 0] == pytest.approx(1.0)
    g = PixelGrid(128, 128)
    m = make_gaussian_mode(g, 20)
    assert np.sum(m.amplitudes**2) == pytest.approx(1.0, abs=1e-9)
    peak = np.unravel_index(np.argmax(m.amplitudes), g.shape)
    assert abs(peak[0] - 63.5) <= 0.5 and abs(peak[1] - 63.5) <= 0.5
    assert np.array_equal(m.amplitudes, make_gaussian_mode(g, 20).amplitudes)
    with pytest.raises(GeometryError):
        make_gaussian_mode(PixelGrid(20, 20), 11)


def test_mode_function_normalization_enforced():
    g = PixelGrid(4, 4)
    with pytest.raises(DomainError):
        ModeFunction(g, np.ones(g.shape))
    m = ModeFunction.normalized(g, np.ones(g.shape))
    assert not m.amplitudes.flags.writeable


@pytest.mark.parametrize("j", [1, 2, 5, 16])
def test_orthogonal_family(j):
    g = PixelGrid(64, 64)
    modes = make_orthogonal_mode_family(g, 10, j)
    mat = np.array([m.amplitudes.ravel() for m in modes])
    assert np.allclose(mat @ mat.T, np.eye(j), atol=1e-6)
    assert np.allclose(np.sum(mat**2, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(modes[0].amplitudes, make_gaussian_mode(g, 10).amplitudes, atol=1e-12)


def test_orthogonal_family_range():
    with pytest.raises(DomainError):
        make_orthogonal_mode_family(PixelGrid(32, 32), 5, 17)
    with pytest.raises(DomainError):
        make_orthogonal_mode_family(PixelGrid(32, 32), 5, 0)


def test_mode_overlap_against_pixel_sum():
    g = PixelGrid(64, 64)
    a = make_gaussian_mode(g, 8)
    b = make_gaussian_mode(g, 8, center=(31.5 + 8, 31.5))
    brute = 0.0
    for r in range(64):
        for c in range(64):
            brute += a.amplitudes[r, c] * b.amplitudes[r, c]
    assert mode_overlap(a, b) == pytest.approx(brute, rel=1e-12)
    assert mode_overlap(a, a) == pytest.approx(1.0)
    hg = make_orthogonal_mode_family(g, 8, 2)
    assert mode_overlap(*hg) < 1e-6
    with pytest.raises(GeometryError):
        mode_overlap(a, make_gaussian_mode(PixelGrid(32, 32), 8))


def test_mask_validation_and_half_plane():
    g = PixelGrid(10, 4)
    with pytest.raises(DomainError):
        TransmissionMask(g, np.full(g.shape, 1.5))
    m = TransmissionMask.half_plane(g)
    assert m.t[:, :5].max() == 0 and m.t[:, 5:].min() == 1
    r = TransmissionMask.half_plane(g, blocked="right", boundary=3)
    assert r.t[:, :3].min() == 1 and r.t[:, 3:].max() == 0


def test_tiled_modes_cover_grid():
    g = PixelGrid(32, 16)
    modes = make_tiled_mode_family(g, 8)
    assert len(modes) == 8
    assert np.allclose(sum(m.intensity for m in modes), 1 / 64)


# --- scene validation -------------------------------------------------------
def test_scene_invariants():
    g = PixelGrid(16, 16)
    lo = make_flat_mode(g)
    mask = TransmissionMask.clear(g)
    with pytest.raises(ConfigurationError):  # non-orthogonal modes
        SceneSpec(g, ProbeSpec.thermal(1, 2), [lo, lo], lo, 1e6, mask)
    with pytest.raises(ConfigurationError):  # weak LO
        SceneSpec(g, ProbeSpec.thermal(10), [lo], lo, 999.0, mask)
    with pytest.raises(ConfigurationError):
        SceneSpec(g, ProbeSpec.thermal(1), [lo], lo, 1e6, mask, usable_indices=(6,))
    with pytest.raises(ConfigurationError):
        SceneSpec(g, ProbeSpec.thermal(1, 2), [lo], lo, 1e6, mask)
    s = SceneSpec(g, ProbeSpec.thermal(1), [lo], lo, 1000.0, mask)
    assert s.usable_indices == (1, 2, 3) and s.cluster_frames == 6
    assert s.exposure_us == 1.7 and s.duty_cycle_us == 544


def test_digest_ignores_mask_only():
    s = scenes.demo_scene()
    clear = s.with_mask(TransmissionMask.clear(s.grid))
    assert s.digest() == clear.digest()
    assert s.digest() != s.with_noise(NoiseModel(3.0)).digest()
    assert s.digest() != s.with_probe(ProbeSpec.thermal(5.0)).digest()


# --- QSI sampler ------------------------------------------------------------
def test_cluster_shape_and_determinism():
    s = scenes.demo_scene(size=32, waist_px=8)
    a = sample_qsi_cluster(s, 4, 99)
    b = sample_qsi_cluster(s, 4, 99)
    assert a.frames.shape == (6, 2, 32, 32) and a.frames.dtype == np.float32
    assert a == b and a.frames.tobytes() == b.frames.tobytes()
    assert a != sample_qsi_cluster(s, 5, 99)
    assert a.cluster_id == 4 and a.seed_tag == 99


def test_parallel_generation_matches_sequential():
    s = scenes.demo_scene(size=32, waist_px=8)
    seq = list(iter_qsi_clusters(s, 6, 5))
    par = list(iter_qsi_clusters(s, 6, 5, workers=3))
    assert seq == par


def test_dark_noise_uses_its_own_stream():
    s = pixel_scene(dark=0.0, frames=4)
    a = sample_qsi_cluster(s, 0, 1).frames.astype(np.float64)
    d10 = sample_qsi_cluster(s.with_noise(NoiseModel(10.0)), 0, 1).frames - a
    d20 = sample_qsi_cluster(s.with_noise(NoiseModel(20.0)), 0, 1).frames - a
    assert 8 < d10.std() < 12
    # same optical draws, same dark draws scaled; float32 storage limits the match
    np.testing.assert_allclose(d20, 2 * d10, atol=0.25)


def test_frame_cluster_checks():
    with pytest.raises(GeometryError):
        FrameCluster(np.zeros((2, 3, 4, 4), np.float32), (0,), 0, 0)
    bad = np.zeros((2, 2, 4, 4), np.float32)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(DomainError):
        FrameCluster(bad, (0,), 0, 0)
    with pytest.raises(GeometryError):
        FrameCluster(np.zeros((2, 2, 4, 4), np.float32), (2,), 0, 0)


def _normalized_difference_variance(scene, clusters, seed=0):
    d2, n = 0.0, 0
    for c in iter_qsi_clusters(scene, clusters, seed):
        fr = c.usable().astype(np.float64)
        d = (fr[:, 0] - fr[:, 1]) / np.sqrt(scene.lo_counts)
        d2 += np.sum(d * d, axis=0)
        n += fr.shape[0]
    per_pixel = d2 / n
    return per_pixel, n


def test_vacuum_shot_noise_limit():
    s = pixel_scene(kind="vacuum", frames=50)
    v, n = _normalized_difference_variance(s, 40)
    samples = v.size * n  # pixels are independent under vacuum
    se = np.sqrt(2.0 / samples)
    assert n * v.size >= 1e5
    assert abs(v.mean() - 1.0) < 3 * se


def test_pixel_variance_law_and_half_block():
    # independent one-pixel modes: every pixel is an independent sample of the pixel law
    grid = PixelGrid(16, 16)
    s = pixel_scene(n_pxl=0.1, size=16, frames=32)
    s = s.with_mask(TransmissionMask.half_plane(grid))
    v, n = _normalized_difference_variance(s, 25)
    left, right = v[:, :8], v[:, 8:]
    for region, expected in ((left, 1.0), (right, 1.2)):
        se = np.sqrt(2 * expected**2 / (n * region.size))
        assert abs(region.mean() - expected) < 3 * se


def test_mean_balance():
    s = pixel_scene(n_pxl=0.5, dark=10.0, frames=32)
    diffs, sums, n = 0.0, 0.0, 0
    for c in iter_qsi_clusters(s, 20, 3):
        fr = c.usable().astype(np.float64)
        diffs += (fr[:, 0] - fr[:, 1]).sum(axis=0)
        sums += (fr[:, 0] + fr[:, 1]).sum(axis=0)
        n += fr.shape[0]
    lo = s.lo_counts
    sd_diff = np.sqrt(lo * 2.0 + 2 * 100)  # thermal V = 2
    assert abs(diffs.mean() / n) < 3 * sd_diff.mean() / np.sqrt(n * lo.size)
    # sums carry only dark noise and float32 rounding
    assert abs(sums.mean() / n - lo.mean()) < 3 * (np.sqrt(200.0) + 0.1) / np.sqrt(n * lo.size)


def test_unusable_frames_carry_no_excess():
    s = scenes.flat_scene(size=8, n_pxl=5.0, dark_std=0.0, cluster_frames=6, usable_indices=(1, 2, 3))
    v_bad, n_bad = 0.0, 0
    for c in iter_qsi_clusters(s, 400, 1):
        fr = c.frames[[0, 4, 5]].astype(np.float64)
        d = (fr[:, 0] - fr[:, 1]) / np.sqrt(s.lo_counts)
        v_bad += np.sum(d * d)
        n_bad += d.size
    # a thermal excess of 2 n = 10 would be obvious
    assert abs(v_bad / n_bad - 1.0) < 0.05


def test_dark_bias_bound():
    s = scenes.flat_scene(size=8, n_pxl=0.0, dark_std=10.0, lo_per_pixel=1e5, kind="vacuum",
                          cluster_frames=20, usable_indices=tuple(range(20)))
    clean = s.with_noise(NoiseModel(0.0))
    a, _ = _normalized_difference_variance(s, 50, 7)
    b, _ = _normalized_difference_variance(clean, 50, 7)
    assert abs(a.mean() - b.mean()) <= 0.002 + 0.001


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 1000))
def test_sampler_is_pure_function_of_seed_and_id(seed, cid):
    s = pixel_scene(frames=2, size=4)
    assert sample_qsi_cluster(s, cid, seed) == sample_qsi_cluster(s, cid, seed)


def test_cluster_streams_independent():
    s = pixel_scene(n_pxl=0.5, size=4, frames=1)
    means = np.array([float((c.frames[:, 0] - c.frames[:, 1]).mean()) for c in iter_qsi_clusters(s, 2000, 11)])
    x = means - means.mean()
    lag1 = np.sum(x[1:] * x[:-1]) / np.sum(x * x)
    assert abs(lag1) < 3 / np.sqrt(len(x))


# --- classical differential imaging -----------------------------------------
def _cdi_scene(kind, mu, t=1.0, dark=0.0):
    s = scenes.flat_scene(size=1, n_pxl=mu, dark_std=dark, lo_per_pixel=100 * max(1, mu), kind=kind)
    return s.with_mask(TransmissionMask(s.grid, np.full(s.grid.shape, t)))


def test_cdi_coherent_poisson():
    probe, ref = sample_cdi_frames(_cdi_scene("coherent", 1.0), 100_000, 0)
    for x in (probe, ref):
        ratio = x.var(ddof=1) / x.mean()
        assert abs(ratio - 1) < 3 * np.sqrt(2 / x.size) + 3 / np.sqrt(x.size)


def test_cdi_thermal_bose_einstein():
    probe, _ = sample_cdi_frames(_cdi_scene("thermal", 1.0), 100_000, 1)
    # Var of a geometric variable with mean 1 is 2; its sampling SE ~ sqrt(mu4 / N)
    se = np.sqrt(np.mean((probe - probe.mean()) ** 4) / probe.size)
    assert abs(probe.var(ddof=1) - 2.0) < 3 * se
    assert abs(probe.mean() - 1.0) < 3 * np.sqrt(2 / probe.size)
    assert set(np.unique(probe)) <= set(range(100))


def test_cdi_opaque_probe_arm_is_empty():
    probe, ref = sample_cdi_frames(_cdi_scene("coherent", 3.0, t=0.0), 1000, 2)
    assert not probe.any() and ref.mean() > 2


def test_cdi_rejects_vacuum():
    with pytest.raises(DomainError):
        sample_cdi_frames(_cdi_scene("vacuum", 0.0), 10, 0)
