"""scikit-learn style wrappers around the multiscale transforms.

``transform`` maps an image stack ``(n, h, w)`` to a coefficient matrix
``(n, t)`` whose columns follow the fitted ``layout_``;
``inverse_transform`` goes back.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_image, check_image_stack
from .layout import CoefficientField
from . import shearlet as _sh
from . import wavelet as _wv


class _MultiscaleTransform(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        X = check_image_stack(X)
        self.layout_ = self._layout(X.shape[1:])
        self.n_features_out_ = self.layout_.size
        return self

    def _check_input(self, X):
        check_is_fitted(self, "layout_")
        X = check_image_stack(X)
        if X.shape[1:] != self.layout_.image_shape:
            raise ValueError(f"fitted for images of shape {self.layout_.image_shape}, got {X.shape[1:]}")
        return X

    def _check_coefficients(self, C):
        check_is_fitted(self, "layout_")
        C = np.asarray(C, dtype=np.float64)
        if C.ndim == 1:
            C = C[None]
        if C.ndim != 2 or C.shape[1] != self.layout_.size:
            raise ValueError(f"expected coefficient rows of length {self.layout_.size}, got shape {C.shape}")
        return C

    def forward(self, img):
        """Transform one image into a :class:`CoefficientField`."""
        img = check_image(img)
        if not hasattr(self, "layout_"):
            self.fit(img[None])
        return CoefficientField(self.layout_, self.transform(img[None])[0])

    def inverse(self, coef):
        if coef.layout != self.layout_:
            raise ValueError("coefficient layout does not match this transform")
        values = np.asarray(coef.values)
        if coef.normalized:
            values = denormalize_values(coef)
        return self.inverse_transform(values[None])[0]

    def describe(self):
        """Canonical description used for hashing and sidecars."""
        check_is_fitted(self, "layout_")
        return {"kind": self.layout_.kind, "levels": self.layout_.levels, "image_shape": list(self.layout_.image_shape)}


class WaveletTransform(_MultiscaleTransform):
    """Orthonormal periodic multilevel DWT.

    Parameters
    ----------
    wavelet : {'haar', 'db4', 'db8'}
    levels : int
        Decomposition depth; image sides must be divisible by ``2**levels``.
    """

    def __init__(self, wavelet="db8", levels=4):
        self.wavelet = wavelet
        self.levels = levels

    def _layout(self, shape):
        self.spec_ = _wv.WaveletSpec.from_name(self.wavelet)
        return _wv.wavelet_layout(shape, self.spec_, self.levels)

    def transform(self, X):
        X = self._check_input(X)
        return _wv._forward_stack(X, self.spec_, self.levels)

    def inverse_transform(self, C):
        C = self._check_coefficients(C)
        return _wv._inverse_stack(C, self.layout_, self.spec_)


class ShearletTransform(_MultiscaleTransform):
    """Band-limited cone-adapted shearlet Parseval frame (square, power-of-two images)."""

    def __init__(self, scales=3, shear_levels=(1, 2, 2)):
        self.scales = scales
        self.shear_levels = shear_levels

    def _layout(self, shape):
        self.spec_ = _sh.ShearletSpec(self.scales, tuple(self.shear_levels))
        return _sh.shearlet_layout(shape, self.spec_)

    def transform(self, X):
        X = self._check_input(X)
        return _sh._forward_stack(X, self.spec_)

    def inverse_transform(self, C):
        C = self._check_coefficients(C)
        return _sh._inverse_stack(C, self.layout_, self.spec_)


def make_transform(name="db8", levels=4, scales=3, shear_levels=(1, 2, 2)):
    """Build an unfitted transform from a short name."""
    if isinstance(name, _MultiscaleTransform):
        return name
    if name == "shearlet":
        return ShearletTransform(scales=scales, shear_levels=tuple(shear_levels))
    if name in _wv.WAVELET_FAMILIES:
        return WaveletTransform(wavelet=name, levels=levels)
    raise ValueError(f"unknown transform {name!r}")


def transform_from_layout(layout):
    """Fitted transform able to invert fields carrying ``layout``."""
    family, _, rest = layout.kind.partition(":")
    if family == "wavelet":
        t = WaveletTransform(wavelet=rest, levels=layout.levels)
    elif family == "shearlet":
        spec = _sh.ShearletSpec.from_kind(layout.kind)
        t = ShearletTransform(scales=spec.scales, shear_levels=spec.shear_levels)
    else:
        raise ValueError(f"unknown layout kind {layout.kind!r}")
    t.fit(np.zeros((1,) + layout.image_shape))
    if t.layout_ != layout:
        raise ValueError("layout is not one this package produces")
    return t


# -- subband RMS normalization ------------------------------------------------

RMS_EPS = 1e-12


def subband_rms(C, layout):
    """RMS of each subband over every row of ``C``."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    return np.array([np.sqrt(np.mean(C[:, sb.slice] ** 2)) for sb in layout.subbands])


def _scale_per_coefficient(rms, layout, eps):
    scale = np.maximum(rms, eps)
    return np.concatenate([np.full(sb.length, s) for sb, s in zip(layout.subbands, scale)])


def denormalize_values(coef, eps=RMS_EPS):
    return np.asarray(coef.values) * _scale_per_coefficient(coef.rms, coef.layout, eps)


class SubbandRMSNormalizer(TransformerMixin, BaseEstimator):
    """Divide each subband by its RMS over the data seen in ``fit``.

    Subbands whose RMS falls below ``eps`` are divided by ``eps`` instead
    and reported in ``guarded_``.
    """

    def __init__(self, layout=None, eps=RMS_EPS):
        self.layout = layout
        self.eps = eps

    def fit(self, C, y=None):
        if self.layout is None:
            raise ValueError("SubbandRMSNormalizer needs a layout")
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        self.rms_ = subband_rms(C, self.layout)
        self.guarded_ = self.rms_ < self.eps
        self.scale_ = _scale_per_coefficient(self.rms_, self.layout, self.eps)
        return self

    def transform(self, C):
        check_is_fitted(self, "scale_")
        return np.asarray(C, dtype=np.float64) / self.scale_

    def inverse_transform(self, C):
        check_is_fitted(self, "scale_")
        return np.asarray(C, dtype=np.float64) * self.scale_


def subband_rms_normalize(coef, reference=None, eps=RMS_EPS):
    """Normalize ``coef`` subband-wise by RMS values fitted on ``reference``.

    ``reference`` is an iterable of fields (or a coefficient matrix) sharing
    the layout; it defaults to ``coef`` itself. An already normalized field
    is returned unchanged.
    """
    if coef.normalized:
        return coef
    if reference is None:
        ref = np.asarray(coef.values)[None]
    elif isinstance(reference, np.ndarray):
        ref = reference
    else:
        ref = np.stack([np.asarray(r.values) for r in reference])
    norm = SubbandRMSNormalizer(coef.layout, eps).fit(ref)
    values = norm.transform(np.asarray(coef.values)[None])[0]
    return CoefficientField(coef.layout, values, norm.rms_, norm.guarded_)


# -- filtered reconstruction --------------------------------------------------


def finest_scales(count):
    """Predicate keeping the ``count`` finest detail scales."""

    def keep(layout):
        band = layout.coefficient_subbands()
        is_detail = np.array([sb.orientation != "A" for sb in layout.subbands])[band]
        return is_detail & (layout.coefficient_scales() <= count)

    return keep


def keep_mask(keep, layout):
    if keep is None:
        return np.ones(layout.size, dtype=bool)
    if callable(keep):
        keep = keep(layout)
    mask = np.asarray(keep, dtype=bool)
    if mask.shape != (layout.size,):
        raise ValueError(f"keep mask must have length {layout.size}")
    return mask


def reconstruct_filtered(coef, keep=None, transform=None):
    """Zero every coefficient outside ``keep`` and invert the transform.

    ``keep`` is a boolean mask over coefficients or a callable taking the
    layout and returning one. Normalized fields are denormalized first.
    """
    transform = transform if transform is not None else transform_from_layout(coef.layout)
    values = denormalize_values(coef) if coef.normalized else np.array(coef.values)
    values = np.where(keep_mask(keep, coef.layout), values, 0.0)
    return transform.inverse_transform(values[None])[0]
