import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chem.forward import (
    DegradationConfig,
    Normalization,
    Psf,
    SceneConfig,
    Source,
    convolve,
    degrade,
    delta_psf,
    fwhm_to_sigma,
    gaussian_psf,
    image_peak_snr,
    make_dataset,
    make_experiment_data,
    render_sources,
    synthesize_scene,
)


def brute_convolve(x, kernel):
    """Circular convolution by direct summation; the kernel origin is at index n // 2."""
    n0, n1 = x.shape
    c0, c1 = n0 // 2, n1 // 2
    out = np.zeros_like(x)
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for p in range(n0):
                for q in range(n1):
                    acc += x[p, q] * kernel[(i - p + c0) % n0, (j - q + c1) % n1]
            out[i, j] = acc
    return out


# -- psf ----------------------------------------------------------------------


def test_fwhm_15_sigma():
    assert abs(gaussian_psf(32, 15).sigma - 6.36996) < 1e-4
    assert fwhm_to_sigma(15) == pytest.approx(15 / (2 * np.sqrt(2 * np.log(2))), abs=1e-15)


@given(st.integers(1, 48), st.floats(0.05, 40))
@settings(max_examples=40, deadline=None)
def test_psf_sums_to_one(side, fwhm):
    assert abs(gaussian_psf(side, fwhm).kernel.sum() - 1.0) <= 1e-12


def test_narrow_psf_concentrates_on_centre():
    k = gaussian_psf(65, 0.1).kernel
    assert k[32, 32] > 0.999
    assert np.unravel_index(np.argmax(k), k.shape) == (32, 32)


@pytest.mark.parametrize("side", [16, 17])
def test_psf_is_mirror_symmetric_about_its_centre(side):
    # centre (side + 1) / 2 in 1-based pixels is symmetric under reversal
    k = gaussian_psf(side, 4.0).kernel
    np.testing.assert_array_equal(k, k[::-1, ::-1])
    np.testing.assert_array_equal(k, k.T)


def test_half_maximum_at_half_fwhm():
    side, fwhm = 101, 10.0
    k = gaussian_psf(side, fwhm).kernel
    row = k[50] / k[50, 50]
    # continuous profile reaches one half at fwhm / 2 from the centre
    sigma = fwhm_to_sigma(fwhm)
    assert np.exp(-((fwhm / 2) ** 2) / (2 * sigma**2)) == pytest.approx(0.5, abs=1e-14)
    assert row[55] == pytest.approx(0.5, abs=1e-12)


def test_psf_validation():
    with pytest.raises(ValueError):
        Psf(np.full((2, 2), 0.3), 1.0, 1.0)
    with pytest.raises(ValueError):
        Psf(np.array([[1.5, -0.5]]), 1.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_psf(8, 0.0)


# -- degradation ----------------------------------------------------------------


def test_delta_psf_without_noise_is_exact_identity(rng):
    x = rng.normal(size=(12, 12))
    y = degrade(x, DegradationConfig(delta_psf(12)))
    np.testing.assert_array_equal(y, x)


@pytest.mark.parametrize("shape", [(8, 8), (7, 9)])
def test_convolution_matches_direct_summation(rng, shape):
    x = rng.normal(size=shape)
    k = rng.uniform(size=shape)
    psf = Psf(k / k.sum(), 0.0, 0.0)
    np.testing.assert_allclose(convolve(x, psf), brute_convolve(x, psf.kernel), atol=1e-12)


def test_degrade_fwhm_15_matches_direct_summation(rng):
    x = rng.uniform(size=(16, 16))
    psf = gaussian_psf(16, 15)
    y = degrade(x, DegradationConfig(psf))
    assert np.max(np.abs(y - brute_convolve(x, psf.kernel))) < 1e-8


def test_noise_is_seeded_and_has_requested_level(rng):
    x = np.zeros((128, 128))
    cfg = DegradationConfig(delta_psf(128), noise_sigma=0.3, seed=7)
    a, b = degrade(x, cfg), degrade(x, cfg)
    np.testing.assert_array_equal(a, b)
    assert a.std() == pytest.approx(0.3, rel=0.02)
    assert not np.array_equal(a, degrade(x, DegradationConfig(delta_psf(128), 0.3, seed=8)))


@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)), arrays(np.float64, (6, 6), elements=st.floats(-10, 10)))
@settings(max_examples=30, deadline=None)
def test_convolution_is_linear_and_preserves_flux(a, b):
    psf = gaussian_psf(6, 2.5)
    np.testing.assert_allclose(convolve(2 * a - b, psf), 2 * convolve(a, psf) - convolve(b, psf), atol=1e-9)
    assert convolve(a, psf).sum() == pytest.approx(a.sum(), abs=1e-9)


# -- scenes ---------------------------------------------------------------------


def test_zero_sources_give_zero_image():
    img = synthesize_scene(SceneConfig(side=16, n_sources=(0, 0)))
    np.testing.assert_array_equal(img, np.zeros((16, 16)))


@pytest.mark.parametrize("radius,ellipticity", [(2.0, 0.0), (3.5, 0.4)])
def test_gaussian_source_flux(radius, ellipticity):
    src = Source(31.3, 30.7, 500.0, radius, ellipticity, 0.6)
    img = render_sources([src], 64)
    assert img.sum() == pytest.approx(500.0, rel=1e-2)


@pytest.mark.parametrize("n", [0.8, 1.0, 2.0])
def test_sersic_source_flux_matches_fine_grid_integral(n):
    src = Source(48.0, 48.0, 100.0, 3.0, 0.2, 0.3, "sersic", n)
    fine = render_sources([src], 97, oversample=9).sum()
    assert fine == pytest.approx(100.0, rel=1e-2)


def test_mirrored_sources_give_symmetric_image():
    side = 32
    a = Source(10.0, 15.5, 300.0, 2.0)
    b = Source(side - 1 - 10.0, 15.5, 300.0, 2.0)
    img = render_sources([a, b], side)
    np.testing.assert_allclose(img, img[:, ::-1], atol=1e-12)


def test_fixed_sources_override_sampling():
    srcs = (Source(8.0, 8.0, 100.0, 2.0),)
    cfg = SceneConfig(side=16, sources=srcs)
    np.testing.assert_array_equal(synthesize_scene(cfg), render_sources(list(srcs), 16))
    with pytest.raises(ValueError):
        SceneConfig(side=16, sources=(Source(20.0, 3.0, 1.0, 1.0),))


def test_scene_config_round_trip():
    cfg = SceneConfig(side=32, seed=5, sources=(Source(3.0, 4.0, 10.0, 1.0, profile="sersic"),))
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg


# -- datasets ---------------------------------------------------------------------


def test_manifest_hash_is_reproducible():
    scene = SceneConfig(side=16, seed=11)
    psf = gaussian_psf(16, 3.0)
    a = make_dataset(scene, psf, 3, seed=4)
    b = make_dataset(scene, psf, 3, seed=4)
    assert a.manifest_hash() == b.manifest_hash()
    np.testing.assert_array_equal(a.X, b.X)
    assert make_dataset(scene, psf, 3, seed=5).manifest_hash() != a.manifest_hash()


def test_auto_noise_sets_faintest_source_peak_snr_to_one():
    ds = make_dataset(SceneConfig(side=32, seed=2), gaussian_psf(32, 5.0), 6)
    assert ds.manifest["peak_snr"]["source_min"] == pytest.approx(1.0, abs=0.05)


def test_truths_are_normalized_to_unit_range():
    ds = make_dataset(SceneConfig(side=16, seed=1), gaussian_psf(16, 3.0), 5)
    assert ds.Y.min() == pytest.approx(-1.0, abs=1e-12)
    assert ds.Y.max() == pytest.approx(1.0, abs=1e-12)
    norm = Normalization(**ds.manifest["normalization"])
    np.testing.assert_allclose(norm.invert(norm.apply(ds.Y)), ds.Y, atol=1e-12)


def test_reported_peak_snr_matches_recomputation():
    psf = gaussian_psf(16, 3.0)
    ds = make_dataset(SceneConfig(side=16, seed=9), psf, 4)
    snr = image_peak_snr(ds.Y, psf, ds.noise_sigma, ds.normalization)
    np.testing.assert_allclose(snr, ds.manifest["peak_snr"]["image_peak"], rtol=1e-9)


def test_psf_sweep_shares_ground_truths():
    scene = SceneConfig(side=16, seed=3)
    sets = [make_dataset(scene, gaussian_psf(16, f), 3, noise_sigma=0.5) for f in (10, 15, 20)]
    for ds in sets[1:]:
        np.testing.assert_array_equal(ds.Y, sets[0].Y)
        assert not np.array_equal(ds.X, sets[0].X)


def test_experiment_data_shares_noise_and_normalization():
    scene = SceneConfig(side=16, seed=3)
    cal, test = make_experiment_data(scene, gaussian_psf(16, 3.0), 4, 3, test_psf=gaussian_psf(16, 5.0))
    assert test.noise_sigma == cal.noise_sigma
    assert test.normalization == cal.normalization
    assert test.psf.fwhm == 5.0
    assert not np.array_equal(test.Y[0], cal.Y[0])


def test_dataset_rejects_mismatched_psf():
    with pytest.raises(ValueError):
        make_dataset(SceneConfig(side=16), gaussian_psf(8, 2.0), 2)
