"""Band-limited cone-adapted shearlet Parseval frame on the discrete torus.

Coefficients are not subsampled: each band is an ``N x N`` image obtained
by filtering with a real, even frequency window. The squared windows sum
to one at every frequency, so the adjoint is an exact inverse.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .._validation import check_image, is_power_of_two
from .layout import APPROX, CoefficientField, Subband, SubbandLayout


@dataclass(frozen=True)
class ShearletSpec:
    """Frame parameters.

    ``shear_levels`` lists, from the coarsest detail scale to the finest,
    the shear level ``k`` of each scale; a scale with level ``k`` carries
    ``2**(k + 2)`` directional bands.
    """

    scales: int = 3
    shear_levels: tuple = (1, 2, 2)

    def __post_init__(self):
        object.__setattr__(self, "shear_levels", tuple(int(k) for k in self.shear_levels))
        if self.scales < 1:
            raise ValueError("need at least one scale")
        if len(self.shear_levels) != self.scales:
            raise ValueError("give one shear level per scale")
        if any(k < 0 for k in self.shear_levels):
            raise ValueError("shear levels must be non-negative")

    @property
    def kind(self):
        return "shearlet:" + "-".join(str(k) for k in self.shear_levels)

    @classmethod
    def from_kind(cls, kind):
        name, _, levels = kind.partition(":")
        if name != "shearlet" or not levels:
            raise ValueError(f"not a shearlet layout kind: {kind!r}")
        shear_levels = tuple(int(k) for k in levels.split("-"))
        return cls(len(shear_levels), shear_levels)

    def shear_level(self, scale):
        """Shear level of detail scale ``scale`` (1 = finest)."""
        return self.shear_levels[self.scales - scale]


def _meyer_aux(x):
    x = np.clip(x, 0.0, 1.0)
    return x**4 * (35 - 84 * x + 70 * x**2 - 20 * x**3)


def _radial_lowpass_sq(r, a):
    """Squared lowpass: 1 for r <= a, 0 for r >= 2a, smooth in between."""
    return np.cos(0.5 * np.pi * _meyer_aux(r / a - 1.0)) ** 2


def _angular_sq(u):
    """Squared shear window; integer translates sum to one."""
    u = np.abs(u)
    out = np.cos(0.5 * np.pi * _meyer_aux(u)) ** 2
    return np.where(u < 1.0, out, 0.0)


def _flip(a):
    """a(-k) on the FFT grid."""
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


@lru_cache(maxsize=16)
def _windows(n, spec):
    fy = np.fft.fftfreq(n)[:, None] * np.ones((1, n))
    fx = np.fft.fftfreq(n)[None, :] * np.ones((n, 1))
    r = np.maximum(np.abs(fx), np.abs(fy))
    horizontal = np.abs(fy) <= np.abs(fx)
    vertical = ~horizontal
    with np.errstate(divide="ignore", invalid="ignore"):
        slope_h = np.where(horizontal & (r > 0), fy / fx, 0.0)
        slope_v = np.where(vertical, fx / fy, 0.0)

    def lowpass(s):
        return _radial_lowpass_sq(r, 2.0 ** (-s - 2))

    bands = [(spec.scales + 1, APPROX, None, lowpass(spec.scales))]
    for scale in range(spec.scales, 0, -1):
        radial = 1.0 - lowpass(1) if scale == 1 else lowpass(scale - 1) - lowpass(scale)
        k = spec.shear_level(scale)
        m = 2**k

        def h(ell):
            return np.where(horizontal, _angular_sq(m * slope_h - ell), 0.0)

        def v(ell):
            return np.where(vertical, _angular_sq(m * slope_v - ell), 0.0)

        # frequency angle runs from -45 to 135 degrees; labels carry the
        # edge orientation, which is perpendicular to it
        ordered = [("seam-", -45.0, h(-m) + v(-m))]
        for ell in range(-m + 1, m):
            ordered.append((f"h{ell:+d}", np.degrees(np.arctan(ell / m)), h(ell)))
        ordered.append(("seam+", 45.0, h(m) + v(m)))
        for ell in range(m - 1, -m, -1):
            ordered.append((f"v{ell:+d}", 90.0 - np.degrees(np.arctan(ell / m)), v(ell)))
        for name, freq_angle, angular in ordered:
            bands.append((scale, name, (freq_angle + 90.0) % 180.0, radial * angular))

    windows = []
    for scale, name, angle, sq in bands:
        # even symmetrization keeps the band real on the Nyquist lines
        sq = 0.5 * (sq + _flip(sq))
        win = np.sqrt(np.clip(sq, 0.0, None))
        win.setflags(write=False)
        windows.append((scale, name, angle, win))
    return tuple(windows)


def shearlet_windows(n, spec=None):
    """Frequency windows ``(scale, label, edge_angle, window)`` in layout order."""
    return _windows(int(n), spec or ShearletSpec())


def partition_defect(n, spec=None):
    """max over frequencies of |sum_k window_k**2 - 1|."""
    total = sum(w**2 for _, _, _, w in shearlet_windows(n, spec))
    return float(np.max(np.abs(total - 1.0)))


def _check_shape(shape):
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"shearlet transform needs a square image, got shape {shape}")
    if not is_power_of_two(shape[0]):
        raise ValueError(f"shearlet transform needs a power-of-two side, got {shape[0]}")


def shearlet_layout(shape, spec=None):
    spec = spec or ShearletSpec()
    _check_shape(shape)
    n = shape[0]
    subbands = []
    for i, (scale, name, angle, _) in enumerate(shearlet_windows(n, spec)):
        subbands.append(Subband(scale, name, i * n * n, n * n, (n, n), angle))
    return SubbandLayout(spec.kind, spec.scales, (n, n), tuple(subbands))


def _forward_stack(X, spec):
    n = X.shape[-1]
    spectrum = np.fft.fft2(X)
    parts = [np.fft.ifft2(spectrum * w).real.reshape(X.shape[0], -1) for *_, w in shearlet_windows(n, spec)]
    return np.concatenate(parts, axis=1)


def _inverse_stack(C, layout, spec):
    n = layout.image_shape[0]
    out = np.zeros((C.shape[0], n, n))
    for sb, (*_, w) in zip(layout.subbands, shearlet_windows(n, spec)):
        band = C[:, sb.slice].reshape(-1, n, n)
        out += np.fft.ifft2(np.fft.fft2(band) * w).real
    return out


def shearlet_forward(img, spec=None):
    spec = spec or ShearletSpec()
    img = check_image(img)
    layout = shearlet_layout(img.shape, spec)
    return CoefficientField(layout, _forward_stack(img[None], spec)[0])


def shearlet_inverse(coef, spec=None):
    """Adjoint synthesis, which is the exact inverse for a Parseval frame."""
    spec = spec or ShearletSpec()
    layout = coef.layout
    if layout.kind != spec.kind or layout != shearlet_layout(layout.image_shape, spec):
        raise ValueError("coefficient layout does not match the shearlet configuration")
    if coef.normalized:
        raise ValueError("denormalize coefficients before inverting")
    return _inverse_stack(np.asarray(coef.values)[None], layout, spec)[0]
