import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chem.transforms import (
    CoefficientField,
    ShearletSpec,
    ShearletTransform,
    WaveletSpec,
    WaveletTransform,
    dwt_forward,
    dwt_inverse,
    field_from_bytes,
    field_from_json,
    field_to_bytes,
    field_to_json,
    finest_scales,
    orthonormality_defects,
    partition_defect,
    reconstruct_filtered,
    shearlet_forward,
    shearlet_inverse,
    shearlet_windows,
    subband_rms_normalize,
)
from chem.transforms.layout import Subband, SubbandLayout

FAMILIES = ["haar", "db4", "db8"]




def dense_analysis_1d(lo, hi, n):
    """Periodized orthonormal analysis matrix: lowpass rows then highpass rows."""
    A = np.zeros((n, n))
    for k in range(n // 2):
        for i in range(len(lo)):
            A[k, (2 * k + i) % n] += lo[i]
            A[n // 2 + k, (2 * k + i) % n] += hi[i]
    return A


# -- filters ------------------------------------------------------------------


@pytest.mark.parametrize("family", FAMILIES)
def test_filters_are_orthonormal_qmf(family):
    spec = WaveletSpec.from_name(family)
    assert orthonormality_defects(spec.lo, spec.hi) < 1e-12
    n = spec.length
    # highpass is the alternating flip of the lowpass
    np.testing.assert_allclose(spec.hi, [(-1) ** k * spec.lo[n - 1 - k] for k in range(n)], atol=0)


@pytest.mark.parametrize("family,moments", [("haar", 1), ("db4", 4), ("db8", 8)])
def test_highpass_vanishing_moments(family, moments):
    spec = WaveletSpec.from_name(family)
    k = np.arange(spec.length, dtype=float)
    for p in range(moments):
        assert abs(np.sum(spec.hi * k**p)) < 1e-7 * max(1.0, spec.length**p)


def test_non_orthonormal_filters_rejected():
    with pytest.raises(ValueError):
        WaveletSpec("bogus", np.array([0.5, 0.5]), np.array([0.5, -0.5]))


def test_unknown_wavelet():
    with pytest.raises(ValueError):
        WaveletSpec.from_name("sym4")


# -- dwt ----------------------------------------------------------------------


def test_constant_image_has_zero_haar_details():
    c = dwt_forward(np.ones((4, 4)), "haar", 1)
    for sb in c.layout.subbands[1:]:
        assert np.all(c.values[sb.slice] == 0.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_constant_image_details_vanish(family):
    c = dwt_forward(np.full((16, 16), 3.7), family, 2)
    for sb in c.layout.subbands[1:]:
        assert np.max(np.abs(c.values[sb.slice])) < 1e-12


def test_haar_2x2_against_dense_matrix():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    spec = WaveletSpec.from_name("haar")
    A = dense_analysis_1d(spec.lo, spec.hi, 2)
    oracle = A @ x @ A.T  # [[LL, HL], [LH, HH]] with rows along y
    c = dwt_forward(x, "haar", 1)
    ll, lh, hl, hh = c.values
    assert ll == pytest.approx(5.0, abs=1e-14)
    assert hh == pytest.approx(0.0, abs=1e-14)
    assert sorted([lh, hl]) == pytest.approx([-2.0, -1.0], abs=1e-14)
    np.testing.assert_allclose([ll, lh, hl, hh], [oracle[0, 0], oracle[1, 0], oracle[0, 1], oracle[1, 1]], atol=1e-14)


def test_db4_energy_8x8(rng):
    x = rng.standard_normal((8, 8))
    c = dwt_forward(x, "db4", 1)
    assert abs(np.sum(c.values**2) - np.sum(x**2)) < 1e-10


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("levels", [1, 2, 4])
def test_dwt_round_trip(family, levels, rng):
    x = rng.standard_normal((16, 32))
    c = dwt_forward(x, family, levels)
    assert c.values.size == x.size
    assert np.max(np.abs(dwt_inverse(c, family) - x)) < 1e-10
    assert abs(np.sum(c.values**2) - np.sum(x**2)) <= 1e-10 * np.sum(x**2)


def test_db8_round_trip_16(rng):
    x = rng.standard_normal((16, 16))
    assert np.max(np.abs(dwt_inverse(dwt_forward(x, "db8", 4), "db8") - x)) < 1e-10


def test_zero_field_inverts_to_zero():
    layout = dwt_forward(np.zeros((8, 8)), "db4", 2).layout
    img = dwt_inverse(CoefficientField(layout, np.zeros(layout.size)), "db4")
    assert np.all(img == 0.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_single_detail_coefficient_is_dense_atom(family):
    n = 8
    spec = WaveletSpec.from_name(family)
    A = dense_analysis_1d(spec.lo, spec.hi, n)
    layout = dwt_forward(np.zeros((n, n)), family, 1).layout
    lh = layout.subbands[1]
    assert lh.orientation == "LH"
    p, q = 1, 2
    values = np.zeros(layout.size)
    values[lh.offset + p * lh.shape[1] + q] = 1.0
    E = np.zeros((n, n))
    E[n // 2 + p, q] = 1.0  # highpass along y, lowpass along x
    atom = A.T @ E @ A
    np.testing.assert_allclose(dwt_inverse(CoefficientField(layout, values), family), atom, atol=1e-12)


def test_dwt_errors():
    with pytest.raises(ValueError):
        dwt_forward(np.zeros((12, 12)), "haar", 3)
    with pytest.raises(ValueError, match="too deep"):
        dwt_forward(np.zeros((4, 4)), "haar", 3)
    with pytest.raises(ValueError):
        dwt_forward(np.zeros((4, 4)), "haar", 0)
    c = dwt_forward(np.zeros((8, 8)), "haar", 1)
    with pytest.raises(ValueError):
        dwt_inverse(c, "db4")


def test_wavelet_layout_order():
    layout = dwt_forward(np.zeros((16, 16)), "haar", 3).layout
    assert [(sb.scale, sb.orientation) for sb in layout.subbands] == [
        (4, "A"),
        (3, "LH"), (3, "HL"), (3, "HH"),
        (2, "LH"), (2, "HL"), (2, "HH"),
        (1, "LH"), (1, "HL"), (1, "HH"),
    ]
    assert layout.size == 256


def test_layout_rejects_gaps():
    with pytest.raises(ValueError):
        SubbandLayout("x", 1, (2, 2), (Subband(2, "A", 0, 1, (1, 1)), Subband(1, "HH", 2, 1, (1, 1))))
    with pytest.raises(ValueError):
        SubbandLayout("x", 1, (2, 2), (Subband(1, "HH", 0, 1, (1, 1)),))


@settings(max_examples=25, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_dwt_linearity(family, a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 8, 8))
    lhs = dwt_forward(a * x + b * y, family, 2).values
    rhs = a * dwt_forward(x, family, 2).values + b * dwt_forward(y, family, 2).values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (8, 16), elements=st.floats(-1e3, 1e3)), st.sampled_from(FAMILIES))
def test_dwt_perfect_reconstruction_property(x, family):
    c = dwt_forward(x, family, 3)
    scale = max(1.0, np.max(np.abs(x)))
    assert np.max(np.abs(dwt_inverse(c, family) - x)) < 1e-10 * scale


# -- shearlets ----------------------------------------------------------------


@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_shearlet_windows_parseval_partition(n):
    assert partition_defect(n) < 1e-8


@pytest.mark.parametrize("n", [16, 32])
def test_shearlet_windows_are_even(n):
    for *_, w in shearlet_windows(n):
        flipped = np.roll(w[::-1, ::-1], 1, axis=(0, 1))
        np.testing.assert_array_equal(w, flipped)


def test_shearlet_zero_image():
    c = shearlet_forward(np.zeros((16, 16)))
    assert np.all(c.values == 0.0)
    assert np.all(shearlet_inverse(CoefficientField(c.layout, np.zeros(c.layout.size))) == 0.0)


def test_shearlet_round_trip_64(rng):
    x = rng.standard_normal((64, 64))
    c = shearlet_forward(x)
    assert np.max(np.abs(shearlet_inverse(c) - x)) < 1e-6
    assert abs(np.sum(c.values**2) - np.sum(x**2)) <= 1e-6 * np.sum(x**2)


def test_shearlet_round_trip_32(rng):
    x = rng.standard_normal((32, 32))
    assert np.max(np.abs(shearlet_inverse(shearlet_forward(x)) - x)) < 1e-6


def test_shearlet_band_counts():
    layout = shearlet_forward(np.zeros((32, 32))).layout
    per_scale = {s: sum(1 for sb in layout.subbands if sb.scale == s) for s in (1, 2, 3, 4)}
    assert per_scale == {1: 16, 2: 16, 3: 8, 4: 1}
    assert layout.kind == "shearlet:1-2-2"


def test_shearlet_45_degree_edge():
    n = 64
    i, j = np.indices((n, n))
    edge = (j > i).astype(float)  # edge along x = y
    c = shearlet_forward(edge)
    finest = [sb for sb in c.layout.subbands if sb.scale == 1]
    energy = {sb.angle: np.sum(c.values[sb.slice] ** 2) for sb in finest}
    nearest = min(energy, key=lambda a: abs(a - 45.0))
    orthogonal = min(energy, key=lambda a: abs(a - 135.0))
    assert nearest == 45.0 and orthogonal == 135.0
    assert energy[nearest] > energy[orthogonal]


def test_shearlet_single_coefficient_atom():
    n = 16
    layout = shearlet_forward(np.zeros((n, n))).layout
    band = 5
    sb = layout.subbands[band]
    values = np.zeros(layout.size)
    values[sb.offset + 3 * n + 7] = 1.0
    delta = np.zeros((n, n))
    delta[3, 7] = 1.0
    window = shearlet_windows(n)[band][3]
    oracle = np.fft.ifft2(window * np.fft.fft2(delta)).real
    np.testing.assert_allclose(shearlet_inverse(CoefficientField(layout, values)), oracle, atol=1e-6)


def test_shearlet_errors():
    with pytest.raises(ValueError):
        shearlet_forward(np.zeros((16, 32)))
    with pytest.raises(ValueError):
        shearlet_forward(np.zeros((24, 24)))
    c = shearlet_forward(np.zeros((16, 16)))
    with pytest.raises(ValueError):
        shearlet_inverse(c, ShearletSpec(2, (1, 1)))
    with pytest.raises(ValueError):
        ShearletSpec(3, (1, 2))


# -- estimators ---------------------------------------------------------------


def test_wavelet_estimator_matches_functional(rng):
    X = rng.standard_normal((3, 16, 16))
    t = WaveletTransform("db4", 2).fit(X)
    C = t.transform(X)
    for x, c in zip(X, C):
        np.testing.assert_array_equal(c, dwt_forward(x, "db4", 2).values)
    np.testing.assert_allclose(t.inverse_transform(C), X, atol=1e-10)
    assert t.get_params() == {"wavelet": "db4", "levels": 2}


def test_shearlet_estimator_round_trip(rng):
    X = rng.standard_normal((2, 16, 16))
    t = ShearletTransform().fit(X)
    np.testing.assert_allclose(t.inverse_transform(t.transform(X)), X, atol=1e-10)
    with pytest.raises(ValueError):
        t.transform(np.zeros((1, 8, 8)))


# -- normalization ------------------------------------------------------------


def _two_band_field(values):
    layout = SubbandLayout(
        "test", 1, (1, 4), (Subband(2, "A", 0, 2, (1, 2)), Subband(1, "HH", 2, 2, (1, 2)))
    )
    return CoefficientField(layout, values)


def test_rms_normalize_arithmetic():
    c = subband_rms_normalize(_two_band_field([3.0, 4.0, 1.0, 1.0]))
    assert c.rms[0] == pytest.approx(np.sqrt(12.5))
    np.testing.assert_allclose(c.values[:2], [3 / np.sqrt(12.5), 4 / np.sqrt(12.5)])
    np.testing.assert_allclose(c.values[:2], [0.8485, 1.1314], atol=1e-4)


def test_rms_normalize_idempotent():
    c = subband_rms_normalize(_two_band_field([3.0, 4.0, 1.0, -2.0]))
    assert subband_rms_normalize(c) is c


def test_rms_zero_subband_guarded():
    c = subband_rms_normalize(_two_band_field([0.0, 0.0, 1.0, -2.0]))
    assert c.guarded.tolist() == [True, False]
    np.testing.assert_array_equal(c.values[:2], [0.0, 0.0])


def test_rms_fit_on_reference_applies_elsewhere(rng):
    ref = [dwt_forward(rng.standard_normal((8, 8)), "haar", 1) for _ in range(5)]
    target = dwt_forward(rng.standard_normal((8, 8)), "haar", 1)
    c = subband_rms_normalize(target, ref)
    stacked = np.stack([r.values for r in ref])
    for i, sb in enumerate(target.layout.subbands):
        expected = np.sqrt(np.mean(stacked[:, sb.slice] ** 2))
        assert c.rms[i] == pytest.approx(expected)


# -- filtered reconstruction ---------------------------------------------------


@pytest.mark.parametrize("kind", ["db8", "shearlet"])
def test_reconstruct_filtered_extremes(kind, rng):
    x = rng.standard_normal((16, 16))
    t = ShearletTransform() if kind == "shearlet" else WaveletTransform(kind, 2)
    c = t.fit(x[None]).forward(x)
    np.testing.assert_allclose(reconstruct_filtered(c, None), t.inverse(c), atol=1e-12)
    np.testing.assert_allclose(reconstruct_filtered(c, lambda layout: np.ones(layout.size, bool)), x, atol=1e-10)
    assert np.all(reconstruct_filtered(c, np.zeros(c.layout.size, bool)) == 0.0)


def test_reconstruct_filtered_one_finest_coefficient():
    n = 8
    spec = WaveletSpec.from_name("db4")
    A = dense_analysis_1d(spec.lo, spec.hi, n)
    x = np.random.default_rng(0).standard_normal((n, n))
    c = dwt_forward(x, "db4", 1)
    hh = c.layout.subbands[3]
    keep = np.zeros(c.layout.size, bool)
    keep[hh.offset] = True
    E = np.zeros((n, n))
    E[n // 2, n // 2] = c.values[hh.offset]
    np.testing.assert_allclose(reconstruct_filtered(c, keep), A.T @ E @ A, atol=1e-12)


def test_reconstruct_filtered_normalized_field(rng):
    x = rng.standard_normal((16, 16))
    c = dwt_forward(x, "haar", 2)
    n = subband_rms_normalize(c)
    np.testing.assert_allclose(reconstruct_filtered(n), x, atol=1e-10)


def test_finest_scales_predicate():
    layout = dwt_forward(np.zeros((16, 16)), "haar", 3).layout
    mask = finest_scales(2)(layout)
    expected = sum(sb.length for sb in layout.subbands if sb.scale <= 2 and sb.orientation != "A")
    assert mask.sum() == expected


# -- serialization -------------------------------------------------------------


@pytest.mark.parametrize("kind", ["db4", "shearlet"])
def test_field_binary_round_trip(kind, rng):
    x = rng.standard_normal((16, 16))
    c = shearlet_forward(x) if kind == "shearlet" else dwt_forward(x, kind, 2)
    c = subband_rms_normalize(c)
    back = field_from_bytes(field_to_bytes(c))
    assert back.layout == c.layout
    np.testing.assert_array_equal(back.values, c.values)
    np.testing.assert_array_equal(back.rms, c.rms)


def test_field_binary_payload_is_little_endian_f8(rng):
    c = dwt_forward(rng.standard_normal((4, 4)), "haar", 1)
    data = field_to_bytes(c)
    assert data[:4] == b"CHCF"
    assert data[-8 * 16 :] == c.values.astype("<f8").tobytes()


def test_field_json_round_trip(rng):
    c = dwt_forward(rng.standard_normal((4, 4)), "haar", 2)
    back = field_from_json(field_to_json(c))
    np.testing.assert_array_equal(back.values, c.values)
    assert back.rms is None


def test_field_bytes_rejects_corruption(rng):
    data = field_to_bytes(dwt_forward(rng.standard_normal((4, 4)), "haar", 1))
    with pytest.raises(ValueError):
        field_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        field_from_bytes(data[:-8])
