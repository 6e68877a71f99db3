import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from chem.forward import Psf, convolve, delta_psf, gaussian_psf
from chem.reconstructors import (
    HallucinationInjector,
    Identity,
    TikhonovDeconvolver,
    WaveletSoftThreshold,
    WienerDeconvolver,
    default_lambda_grid,
    make_reconstructor,
    model_identifier,
    oriented_texture,
    parse_model_id,
    sure_divergence,
    sure_select_lambda,
    tikhonov_deconvolve,
    wiener_deconvolve,
)
from chem.transforms import ShearletTransform


def dense_blur(psf):
    """Matrix of ``x -> h * x`` on flattened images, built column by column."""
    n = psf.kernel.size
    H = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        H[:, k] = convolve(e.reshape(psf.shape), psf).ravel()
    return H


def dense_laplacian(shape):
    """Periodic 5-point Laplacian written out entry by entry."""
    h, w = shape
    L = np.zeros((h * w, h * w))
    for i in range(h):
        for j in range(w):
            r = i * w + j
            L[r, r] = 4.0
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                L[r, ((i + di) % h) * w + (j + dj) % w] -= 1.0
    return L


def brute_kernel_psf(rng, shape):
    k = rng.uniform(0.1, 1.0, size=shape)
    return Psf(k / k.sum(), 0.0, 0.0)


# -- Tikhonov -------------------------------------------------------------------


@pytest.mark.parametrize("gamma", ["laplacian", "identity"])
def test_tikhonov_matches_dense_normal_equations(rng, gamma):
    psf = gaussian_psf(8, 2.0)
    y = rng.normal(size=(8, 8))
    H = dense_blur(psf)
    G = dense_laplacian((8, 8)) if gamma == "laplacian" else np.eye(64)
    lam = 0.1
    x = np.linalg.solve(H.T @ H + lam * G.T @ G, H.T @ y.ravel())
    assert np.max(np.abs(tikhonov_deconvolve(y, psf, lam, gamma).ravel() - x)) < 1e-8


def test_tikhonov_with_asymmetric_kernel_matches_dense_solve(rng):
    psf = brute_kernel_psf(rng, (8, 8))
    y = rng.normal(size=(8, 8))
    H = dense_blur(psf)
    G = dense_laplacian((8, 8))
    x = np.linalg.solve(H.T @ H + 0.3 * G.T @ G, H.T @ y.ravel())
    np.testing.assert_allclose(tikhonov_deconvolve(y, psf, 0.3).ravel(), x, atol=1e-8)


def test_delta_psf_with_zero_weight_returns_input(rng):
    y = rng.normal(size=(8, 8))
    np.testing.assert_array_equal(tikhonov_deconvolve(y, delta_psf(8), 0.0), y)


def test_tiny_weight_inverts_noiseless_blur(rng):
    # odd side centres the kernel on a pixel, so the spectrum stays positive
    psf = gaussian_psf(15, 1.0)
    assert np.min(np.abs(psf.transfer())) > 0.1
    x = rng.normal(size=(15, 15))
    x_hat = tikhonov_deconvolve(convolve(x, psf), psf, 1e-10)
    assert np.max(np.abs(x_hat - x)) < 1e-4


def test_vanishing_response_with_zero_weight_is_singular():
    k = np.zeros((8, 8))
    k[4, 4] = k[4, 5] = 0.5  # two-tap average kills the Nyquist column
    with pytest.raises(ValueError, match="singular"):
        tikhonov_deconvolve(np.ones((8, 8)), Psf(k, 0.0, 0.0), 0.0)


def test_sure_divergence_matches_dense_trace():
    psf = gaussian_psf(8, 3.0)
    H = dense_blur(psf)
    G = dense_laplacian((8, 8))
    lam = 0.05
    A = H @ np.linalg.solve(H.T @ H + lam * G.T @ G, H.T)
    assert sure_divergence(psf, lam) == pytest.approx(np.trace(A), abs=1e-9)


def test_sure_curve_matches_dense_formula(rng):
    psf = gaussian_psf(8, 3.0)
    sigma = 0.2
    y = convolve(rng.normal(size=(8, 8)), psf) + sigma * rng.normal(size=(8, 8))
    H = dense_blur(psf)
    G = dense_laplacian((8, 8))
    grid = [1e-3, 1e-2, 1e-1]
    res = sure_select_lambda(y, psf, sigma, grid)
    for lam, value in zip(grid, res.curve):
        A = H @ np.linalg.solve(H.T @ H + lam * G.T @ G, H.T)
        r = A @ y.ravel() - y.ravel()
        expected = r @ r - 64 * sigma**2 + 2 * sigma**2 * np.trace(A)
        assert value == pytest.approx(expected, abs=1e-9)


def test_sure_is_unbiased_for_prediction_risk(rng):
    # Monte Carlo mean of SURE tracks the mean true risk ||H x_hat - H x||^2 across the grid
    psf = gaussian_psf(16, 3.0)
    x = rng.normal(size=(16, 16))
    hx = convolve(x, psf)
    sigma = 0.1
    grid = default_lambda_grid(psf, size=8)
    sure, risk = np.zeros(grid.size), np.zeros(grid.size)
    reps = 300
    for _ in range(reps):
        y = hx + sigma * rng.normal(size=hx.shape)
        sure += sure_select_lambda(y, psf, sigma, grid).curve
        for i, lam in enumerate(grid):
            risk[i] += np.sum((convolve(tikhonov_deconvolve(y, psf, lam), psf) - hx) ** 2)
    sure /= reps
    risk /= reps
    # each replicate's SURE has standard deviation of order sigma^2 sqrt(2 n)
    assert np.max(np.abs(sure - risk)) < 4 * sigma**2 * np.sqrt(2 * 256) / np.sqrt(reps)
    assert np.corrcoef(sure, risk)[0, 1] > 0.99


def test_sure_choice_is_grid_member(rng):
    psf = gaussian_psf(16, 4.0)
    y = rng.normal(size=(16, 16))
    res = sure_select_lambda(y, psf, 0.5)
    assert res.lam == res.grid[res.index]
    assert res.curve.shape == res.grid.shape
    with pytest.raises(ValueError):
        sure_select_lambda(y, psf, 0.0)


def test_default_grid_scales_with_peak_response():
    grid = default_lambda_grid(gaussian_psf(32, 15.0))
    assert grid[0] == pytest.approx(1e-6)
    assert grid[-1] == pytest.approx(1e2)
    assert np.all(np.diff(np.log(grid)) > 0)


def test_tikhonov_estimator_validates():
    with pytest.raises(ValueError):
        TikhonovDeconvolver(None).predict(np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        TikhonovDeconvolver(gaussian_psf(4, 1.0), lam="sure").predict(np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        TikhonovDeconvolver(gaussian_psf(4, 1.0), lam=-1.0).predict(np.zeros((1, 4, 4)))


# -- Wiener -----------------------------------------------------------------------


def test_wiener_matches_dense_solve(rng):
    psf = gaussian_psf(8, 2.5)
    y = rng.normal(size=(8, 8))
    H = dense_blur(psf)
    snr = 50.0
    x = np.linalg.solve(H.T @ H + np.eye(64) / snr, H.T @ y.ravel())
    np.testing.assert_allclose(wiener_deconvolve(y, psf, snr).ravel(), x, atol=1e-10)


@given(st.floats(0.01, 1e6))
@settings(max_examples=25, deadline=None)
def test_wiener_on_delta_psf_shrinks_by_snr(snr):
    y = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(wiener_deconvolve(y, delta_psf(4), snr), y * snr / (snr + 1), rtol=1e-12, atol=1e-12)


def test_wiener_limits(rng):
    y = rng.normal(size=(8, 8))
    np.testing.assert_allclose(wiener_deconvolve(y, delta_psf(8), np.inf), y, atol=1e-14)
    np.testing.assert_array_equal(wiener_deconvolve(np.zeros((8, 8)), gaussian_psf(8, 2.0), 10.0), np.zeros((8, 8)))
    psf = gaussian_psf(9, 1.0)
    y = rng.normal(size=(9, 9))
    np.testing.assert_allclose(wiener_deconvolve(y, psf, np.inf), tikhonov_deconvolve(y, psf, 0.0), atol=1e-10)


# -- soft threshold -------------------------------------------------------------------


def test_soft_threshold_keeps_constant_image():
    x = np.full((32, 32), 2.5)
    np.testing.assert_allclose(WaveletSoftThreshold(noise_sigma=0.1)(x), x, atol=1e-12)


def test_soft_threshold_reduces_noise(rng):
    rows, cols = np.indices((64, 64))
    clean = np.sin(rows / 9.0) + np.cos(cols / 7.0)
    noisy = clean + 0.3 * rng.normal(size=clean.shape)
    den = WaveletSoftThreshold()(noisy)
    assert np.mean((den - clean) ** 2) < 0.5 * np.mean((noisy - clean) ** 2)


# -- hallucination injector -----------------------------------------------------------


def test_zero_amplitude_is_base_output(rng):
    X = rng.normal(size=(3, 32, 32))
    model = HallucinationInjector(Identity(), amplitude=0.0)
    np.testing.assert_array_equal(model.predict(X), X)


@given(st.floats(0.01, 5.0), st.sampled_from([4, 8, 16]), st.floats(0, 180))
@settings(max_examples=25, deadline=None)
def test_injected_energy_is_amplitude_squared_times_patch(amp, patch, angle):
    x = np.zeros((32, 32))
    x[5, 7] = 1.0
    out = HallucinationInjector(Identity(), amplitude=amp, angle=angle, patch=patch)(x)
    added = out - x
    assert np.sum(added**2) == pytest.approx(amp**2 * patch**2, rel=1e-10)
    assert np.count_nonzero(added) <= patch**2


def test_texture_is_unit_rms_and_oriented():
    tex = oriented_texture((64, 64), 45.0, 0.125)
    assert np.sqrt(np.mean(tex**2)) == pytest.approx(1.0, abs=1e-12)
    # stripes at 45 degrees: constant along the (1, 1) direction
    np.testing.assert_allclose(tex[1:, 1:], tex[:-1, :-1], atol=1e-12)


def test_injection_wraps_and_follows_brightest_pixel():
    x = np.zeros((16, 16))
    x[0, 15] = 10.0
    out = HallucinationInjector(Identity(), amplitude=1.0, patch=4)(x)
    changed = np.argwhere(out != x)
    assert set(changed[:, 0]) == {14, 15, 0, 1}
    assert set(changed[:, 1]) == {13, 14, 15, 0}


def test_injected_45_degree_texture_lands_in_matching_finest_band():
    rng = np.random.default_rng(3)
    base = rng.normal(scale=0.05, size=(64, 64))
    base[32, 32] = 1.0
    out = HallucinationInjector(Identity(), amplitude=0.5, angle=45.0, frequency=0.35, patch=24)(base)
    T = ShearletTransform().fit(base[None])
    c_out, c_base = T.transform(out[None])[0], T.transform(base[None])[0]
    gain = np.array([np.sum(c_out[sb.slice] ** 2) - np.sum(c_base[sb.slice] ** 2) for sb in T.layout_.subbands])
    finest = [i for i, sb in enumerate(T.layout_.subbands) if sb.scale == 1]
    best = max(finest, key=lambda i: gain[i])
    assert int(np.argmax(gain)) == best
    assert T.layout_.subbands[best].orientation == "seam-"


# -- registry -----------------------------------------------------------------------------


def test_parse_model_id():
    assert parse_model_id("wiener:snr=100") == ("wiener", {"snr": 100})
    assert parse_model_id("tikhonov:sure") == ("tikhonov", {"_": "sure"})
    assert parse_model_id("hallucinator:base=tikhonov,amp=0.2,angle=45") == (
        "hallucinator",
        {"base": "tikhonov", "amp": 0.2, "angle": 45},
    )


def test_registry_builds_models():
    psf = gaussian_psf(16, 3.0)
    assert isinstance(make_reconstructor("identity"), Identity)
    t = make_reconstructor("tikhonov:lam=0.5", psf)
    assert t.lam == 0.5 and t.identifier == "tikhonov:lam=0.5"
    assert make_reconstructor("tikhonov:sure", psf, 0.1).identifier == "tikhonov:sure"
    assert make_reconstructor("wiener:snr=100", psf).snr == 100.0
    h = make_reconstructor("hallucinator:base=tikhonov,amp=0.2,angle=45", psf, 0.1)
    assert isinstance(h.base, TikhonovDeconvolver) and h.amplitude == 0.2
    pipe = make_reconstructor("tikhonov:sure+softthresh", psf, 0.1)
    assert isinstance(pipe, Pipeline)
    assert model_identifier(pipe).startswith("tikhonov:sure+softthresh")
    for bad in ("nope", "wiener:snr=1,foo=2", "tikhonov"):
        with pytest.raises(ValueError):
            make_reconstructor(bad)


def test_pipeline_composes_stages(rng):
    psf = gaussian_psf(16, 3.0)
    X = rng.normal(size=(2, 16, 16))
    pipe = make_reconstructor("tikhonov:lam=0.1+softthresh:levels=2", psf, 0.2)
    first = TikhonovDeconvolver(psf, 0.1).predict(X)
    np.testing.assert_allclose(pipe.predict(X), WaveletSoftThreshold(levels=2, noise_sigma=0.2).predict(first))


def test_models_follow_estimator_protocol():
    model = HallucinationInjector(WienerDeconvolver(gaussian_psf(8, 2.0), 10.0), amplitude=0.3, patch=4)
    params = model.get_params()
    assert params["amplitude"] == 0.3 and params["base__snr"] == 10.0
    twin = clone(model).set_params(base__snr=20.0)
    assert twin.base.snr == 20.0 and model.base.snr == 10.0
    X = np.ones((2, 8, 8))
    np.testing.assert_array_equal(model.fit(X).transform(X), model.predict(X))
