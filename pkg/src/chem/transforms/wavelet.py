"""Orthonormal periodic 2D discrete wavelet transform (haar, db4, db8)."""

from dataclasses import dataclass

import numpy as np

from .._validation import check_image
from .layout import APPROX, CoefficientField, Subband, SubbandLayout

# Minimum-phase Daubechies scaling filters (db<N> has 2N taps).
_DAUBECHIES = {
    "haar": (
        0.70710678118654752440,
        0.70710678118654752440,
    ),
    "db4": (
        0.23037781330889650086,
        0.71484657055291564709,
        0.63088076792985890788,
        -0.027983769416859854211,
        -0.18703481171909308408,
        0.030841381835560763627,
        0.032883011666885199735,
        -0.010597401785069032105,
    ),
    "db8": (
        0.054415842243104009955,
        0.31287159091429997066,
        0.67563073629728980681,
        0.58535468365420671277,
        -0.015829105256349305667,
        -0.28401554296154692652,
        0.00047248457391328277036,
        0.12874742662047845886,
        -0.01736930100180754617,
        -0.044088253930794751507,
        0.013981027917398281649,
        0.0087460940474057767164,
        -0.0048703529934515743104,
        -0.0003917403733769470463,
        0.00067544940645056936637,
        -0.00011747678412476953373,
    ),
}

WAVELET_FAMILIES = tuple(_DAUBECHIES)

# Edge orientation captured by each detail band (x = column, y = row).
# LH: lowpass along x, highpass along y -> horizontal edges.
_DETAIL_BANDS = (("LH", 0.0), ("HL", 90.0), ("HH", None))


def orthonormality_defects(lo, hi):
    """Largest violation of the orthonormal two-channel filter bank identities."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    n = lo.size
    defects = [abs(lo.sum() - np.sqrt(2.0)), abs(hi.sum())]
    for k in range(0, n // 2):
        s = 2 * k
        target = 1.0 if k == 0 else 0.0
        defects.append(abs(np.dot(lo[: n - s], lo[s:]) - target))
        defects.append(abs(np.dot(hi[: n - s], hi[s:]) - target))
        defects.append(abs(np.dot(lo[: n - s], hi[s:])))
        defects.append(abs(np.dot(hi[: n - s], lo[s:])))
    return max(defects)


@dataclass(frozen=True)
class WaveletSpec:
    family: str
    lo: np.ndarray
    hi: np.ndarray
    boundary: str = "periodic"

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size % 2:
            raise ValueError("filters must be 1D, of equal even length")
        if self.boundary != "periodic":
            raise ValueError(f"unsupported boundary rule {self.boundary!r}")
        defect = orthonormality_defects(lo, hi)
        if defect > 1e-12:
            raise ValueError(f"filters of {self.family!r} are not orthonormal (defect {defect:.2e})")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_name(cls, family):
        if isinstance(family, cls):
            return family
        try:
            lo = np.array(_DAUBECHIES[family])
        except KeyError:
            raise ValueError(f"unknown wavelet {family!r}; choose from {WAVELET_FAMILIES}") from None
        # quadrature mirror highpass: g[n] = (-1)^n h[L-1-n]
        hi = lo[::-1] * (-1.0) ** np.arange(lo.size)
        return cls(family, lo, hi)

    @property
    def length(self):
        return self.lo.size


def _analysis(x, lo, hi, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(lo.size)[None, :]) % n
    windows = x[..., idx]
    a = windows @ lo
    d = windows @ hi
    return np.moveaxis(a, -1, axis), np.moveaxis(d, -1, axis)


def _synthesis(a, d, lo, hi, axis):
    a = np.moveaxis(a, axis, -1)
    d = np.moveaxis(d, axis, -1)
    n = 2 * a.shape[-1]
    up_a = np.zeros(a.shape[:-1] + (n,))
    up_d = np.zeros_like(up_a)
    up_a[..., ::2] = a
    up_d[..., ::2] = d
    out = np.zeros_like(up_a)
    for k in range(lo.size):
        out += lo[k] * np.roll(up_a, k, axis=-1) + hi[k] * np.roll(up_d, k, axis=-1)
    return np.moveaxis(out, -1, axis)


def _check_depth(shape, levels):
    if int(levels) != levels or levels < 1:
        raise ValueError(f"levels must be a positive integer, got {levels!r}")
    for side in shape:
        if 2**levels > side:
            raise ValueError(f"{levels} levels is too deep for an image of shape {shape}")
        if side % 2**levels:
            raise ValueError(f"image shape {shape} is not divisible by 2**{levels}")


def wavelet_layout(shape, spec, levels):
    _check_depth(shape, levels)
    h, w = shape
    subbands = []
    offset = 0
    ch, cw = h // 2**levels, w // 2**levels
    subbands.append(Subband(levels + 1, APPROX, offset, ch * cw, (ch, cw)))
    offset += ch * cw
    for scale in range(levels, 0, -1):
        sh, sw = h // 2**scale, w // 2**scale
        for name, angle in _DETAIL_BANDS:
            subbands.append(Subband(scale, name, offset, sh * sw, (sh, sw), angle))
            offset += sh * sw
    return SubbandLayout(f"wavelet:{spec.family}", levels, (h, w), tuple(subbands))


def _forward_stack(X, spec, levels):
    """Coefficient matrix ``(n, t)`` for a stack ``(n, h, w)``, coarsest first."""
    n = X.shape[0]
    details = []
    approx = X
    for _ in range(levels):
        lo_x, hi_x = _analysis(approx, spec.lo, spec.hi, axis=2)
        ll, lh = _analysis(lo_x, spec.lo, spec.hi, axis=1)
        hl, hh = _analysis(hi_x, spec.lo, spec.hi, axis=1)
        details.append((lh, hl, hh))
        approx = ll
    parts = [approx.reshape(n, -1)]
    for lh, hl, hh in reversed(details):
        parts.extend(b.reshape(n, -1) for b in (lh, hl, hh))
    return np.concatenate(parts, axis=1)


def _inverse_stack(C, layout, spec):
    n = C.shape[0]
    blocks = [C[:, sb.slice].reshape((n,) + sb.shape) for sb in layout.subbands]
    approx = blocks[0]
    for i in range(layout.levels):
        lh, hl, hh = blocks[1 + 3 * i : 4 + 3 * i]
        lo_x = _synthesis(approx, lh, spec.lo, spec.hi, axis=1)
        hi_x = _synthesis(hl, hh, spec.lo, spec.hi, axis=1)
        approx = _synthesis(lo_x, hi_x, spec.lo, spec.hi, axis=2)
    return approx


def dwt_forward(img, spec, levels):
    """Multilevel orthonormal DWT of one image with periodic extension."""
    spec = WaveletSpec.from_name(spec)
    img = check_image(img)
    layout = wavelet_layout(img.shape, spec, levels)
    return CoefficientField(layout, _forward_stack(img[None], spec, levels)[0])


def dwt_inverse(coef, spec):
    spec = WaveletSpec.from_name(spec)
    if coef.layout.kind != f"wavelet:{spec.family}":
        raise ValueError(f"layout {coef.layout.kind!r} does not match wavelet {spec.family!r}")
    if coef.normalized:
        raise ValueError("denormalize coefficients before inverting")
    return _inverse_stack(np.asarray(coef.values)[None], coef.layout, spec)[0]
