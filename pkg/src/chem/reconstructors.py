"""Reconstruction models: classical deconvolvers and a hallucination injector.

Every model follows the scikit-learn transformer protocol on image stacks
``(n, h, w)``: ``fit`` is a no-op, ``predict`` (alias ``transform``)
returns reconstructions, so models chain inside a ``Pipeline``.
"""

import numbers
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.pipeline import Pipeline

from ._validation import check_image, check_image_stack
from .forward import Psf
from .transforms.wavelet import WaveletSpec, _forward_stack, _inverse_stack, wavelet_layout


class BaseReconstructor(TransformerMixin, BaseEstimator):
    deterministic = True

    def fit(self, X, y=None):
        return self

    def __sklearn_is_fitted__(self):
        # stateless: usable without fit, also inside a Pipeline
        return True

    def predict(self, X):
        X = check_image_stack(X)
        return np.stack([self._predict_one(x) for x in X])

    def transform(self, X):
        return self.predict(X)

    def __call__(self, x):
        """Reconstruct a single image."""
        return self.predict(check_image(x)[None])[0]

    @property
    def identifier(self):
        return type(self).__name__.lower()


class Identity(BaseReconstructor):
    def predict(self, X):
        return check_image_stack(X).copy()

    @property
    def identifier(self):
        return "identity"


# -- Tikhonov -----------------------------------------------------------------


def laplacian_symbol(shape):
    """|Gamma|^2 for the periodic 5-point Laplacian."""
    ky = 2.0 * np.pi * np.fft.fftfreq(shape[0])[:, None]
    kx = 2.0 * np.pi * np.fft.fftfreq(shape[1])[None, :]
    g = 4.0 - 2.0 * np.cos(ky) - 2.0 * np.cos(kx)
    return g**2


def penalty_symbol(gamma, shape):
    if gamma == "laplacian":
        return laplacian_symbol(shape)
    if gamma == "identity":
        return np.ones(shape)
    raise ValueError(f"unknown regularizer {gamma!r}")


def _check_grid(y, psf):
    if y.shape[-2:] != psf.shape:
        raise ValueError(f"image grid {y.shape[-2:]} does not match psf grid {psf.shape}")


def tikhonov_filter(psf, lam, gamma="laplacian"):
    """Fourier multiplier of ``(H'H + lam G'G)^-1 H'``."""
    H = psf.transfer()
    denom = np.abs(H) ** 2 + lam * penalty_symbol(gamma, psf.shape)
    if np.any(denom <= 0):
        raise ValueError("regularized normal equations are singular: the psf response vanishes where the penalty does")
    return np.conj(H) / denom


def tikhonov_deconvolve(y, psf, lam, gamma="laplacian"):
    """Exact solution of ``(H'H + lam G'G) x = H'y`` for circulant ``H`` and ``G``."""
    y = np.asarray(y, dtype=np.float64)
    _check_grid(y, psf)
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam!r}")
    if lam == 0 and psf.is_delta():
        return y.copy()
    return np.fft.ifft2(np.fft.fft2(y) * tikhonov_filter(psf, lam, gamma)).real


def default_lambda_grid(psf, size=40, span=(1e-6, 1e2)):
    """Log-spaced grid scaled by the peak squared psf response.

    The median response of a broad Gaussian psf underflows, which would
    squeeze the grid far below any useful weight; the peak is 1 for a
    normalized kernel.
    """
    scale = np.max(np.abs(psf.transfer()) ** 2)
    return scale * np.logspace(np.log10(span[0]), np.log10(span[1]), size)


def _influence(psf, grid, gamma):
    """Fourier symbols of ``y -> H x_hat`` for every lambda in the grid."""
    h2 = np.abs(psf.transfer()) ** 2
    g2 = penalty_symbol(gamma, psf.shape)
    return h2 / (h2 + np.asarray(grid)[:, None, None] * g2)


def sure_divergence(psf, lam, gamma="laplacian"):
    """Trace of the influence matrix ``H (H'H + lam G'G)^-1 H'``."""
    return float(_influence(psf, [lam], gamma)[0].sum())


@dataclass(frozen=True)
class SureResult:
    lam: float
    grid: np.ndarray
    curve: np.ndarray

    @property
    def index(self):
        return int(np.argmin(self.curve))


def sure_select_lambda(y, psf, noise_sigma, grid=None, gamma="laplacian"):
    """Pick lambda minimizing the unbiased estimate of ``E||H x_hat - H x||^2``.

    The divergence of the linear estimator is evaluated exactly through its
    Fourier symbol.
    """
    y = check_image(y)
    _check_grid(y, psf)
    if not noise_sigma > 0:
        raise ValueError("noise_sigma must be positive for SURE")
    grid = default_lambda_grid(psf) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    a = _influence(psf, grid, gamma)
    Y = np.fft.fft2(y)
    n = y.size
    fit = np.sum(np.abs((a - 1.0) * Y) ** 2, axis=(1, 2)) / n
    curve = fit - n * noise_sigma**2 + 2.0 * noise_sigma**2 * a.sum(axis=(1, 2))
    return SureResult(float(grid[np.argmin(curve)]), grid, curve)


class TikhonovDeconvolver(BaseReconstructor):
    """Quadratic-regularized inverse filter.

    ``lam`` is a non-negative weight or ``'sure'``, in which case it is
    selected per image by SURE over ``grid`` using ``noise_sigma``.
    """

    def __init__(self, psf=None, lam="sure", noise_sigma=None, gamma="laplacian", grid=None):
        self.psf = psf
        self.lam = lam
        self.noise_sigma = noise_sigma
        self.gamma = gamma
        self.grid = grid

    def _check(self):
        if not isinstance(self.psf, Psf):
            raise ValueError("TikhonovDeconvolver needs a Psf")
        if self.lam == "sure":
            if self.noise_sigma is None or not self.noise_sigma > 0:
                raise ValueError("SURE selection needs a positive noise_sigma")
        elif not (isinstance(self.lam, numbers.Real) and self.lam >= 0):
            raise ValueError(f"lam must be >= 0 or 'sure', got {self.lam!r}")

    def select_lambda(self, y):
        self._check()
        if self.lam != "sure":
            return float(self.lam)
        return sure_select_lambda(y, self.psf, self.noise_sigma, self.grid, self.gamma).lam

    def predict(self, X):
        self._check()
        X = check_image_stack(X)
        _check_grid(X, self.psf)
        if self.lam != "sure":
            return np.stack([tikhonov_deconvolve(x, self.psf, self.lam, self.gamma) for x in X])
        return np.stack([tikhonov_deconvolve(x, self.psf, self.select_lambda(x), self.gamma) for x in X])

    @property
    def identifier(self):
        lam = self.lam if self.lam == "sure" else f"lam={self.lam:g}"
        return f"tikhonov:{lam}"


# -- Wiener -------------------------------------------------------------------


def wiener_deconvolve(y, psf, snr):
    """Fourier Wiener filter ``conj(H) / (|H|^2 + 1/snr)``; ``snr`` may be spectral."""
    y = np.asarray(y, dtype=np.float64)
    _check_grid(y, psf)
    snr = np.asarray(snr, dtype=np.float64)
    if np.any(snr <= 0):
        raise ValueError("snr must be positive")
    H = psf.transfer()
    with np.errstate(divide="ignore"):
        inv = np.where(np.isinf(snr), 0.0, 1.0 / snr)
    return np.fft.ifft2(np.fft.fft2(y) * np.conj(H) / (np.abs(H) ** 2 + inv)).real


class WienerDeconvolver(BaseReconstructor):
    def __init__(self, psf=None, snr=100.0):
        self.psf = psf
        self.snr = snr

    def _predict_one(self, x):
        return wiener_deconvolve(x, self.psf, self.snr)

    @property
    def identifier(self):
        return f"wiener:snr={self.snr:g}"


# -- wavelet denoiser ---------------------------------------------------------


class WaveletSoftThreshold(BaseReconstructor):
    """Soft-threshold the detail coefficients of an orthonormal DWT.

    The threshold is ``k * sigma`` with ``sigma`` given or estimated from
    the finest diagonal band by the median absolute deviation.
    """

    def __init__(self, wavelet="db4", levels=3, k=3.0, noise_sigma=None):
        self.wavelet = wavelet
        self.levels = levels
        self.k = k
        self.noise_sigma = noise_sigma

    def _predict_one(self, x):
        spec = WaveletSpec.from_name(self.wavelet)
        layout = wavelet_layout(x.shape, spec, self.levels)
        c = _forward_stack(x[None], spec, self.levels)[0]
        sigma = self.noise_sigma
        if sigma is None:
            sigma = np.median(np.abs(c[layout.subbands[-1].slice])) / 0.6745
        t = self.k * sigma
        detail = slice(layout.subbands[0].length, None)
        c[detail] = np.sign(c[detail]) * np.maximum(np.abs(c[detail]) - t, 0.0)
        return _inverse_stack(c[None], layout, spec)[0]

    @property
    def identifier(self):
        return f"softthresh:wavelet={self.wavelet},levels={self.levels},k={self.k:g}"


# -- hallucination injection --------------------------------------------------


def oriented_texture(shape, angle, frequency):
    """Unit-RMS sinusoid whose stripes run at ``angle`` degrees.

    Angles are measured from the x (column) axis toward the y (row) axis;
    ``frequency`` is in cycles per pixel across the stripes.
    """
    t = np.deg2rad(angle)
    rows, cols = np.indices(shape, dtype=np.float64)
    phase = 2.0 * np.pi * frequency * (-np.sin(t) * cols + np.cos(t) * rows)
    tex = np.cos(phase + 0.25 * np.pi)
    rms = np.sqrt(np.mean(tex**2))
    if rms == 0:
        raise ValueError("texture vanishes on the patch")
    return tex / rms


class HallucinationInjector(BaseReconstructor):
    """Wrap ``base`` and paste an oriented texture patch into its output.

    The ``patch x patch`` texture has unit RMS and is scaled by
    ``amplitude``. With ``placement='brightest'`` it is centred on the
    brightest pixel of the base output, shifted by ``offset``, wrapping
    around the borders; ``placement='fixed'`` centres it on ``offset``.
    """

    def __init__(self, base=None, amplitude=0.2, angle=45.0, frequency=0.4, patch=16,
                 placement="brightest", offset=(0, 0)):
        self.base = base
        self.amplitude = amplitude
        self.angle = angle
        self.frequency = frequency
        self.patch = patch
        self.placement = placement
        self.offset = offset

    def texture(self):
        return self.amplitude * oriented_texture((self.patch, self.patch), self.angle, self.frequency)

    def centre(self, x):
        if self.placement == "brightest":
            r, c = np.unravel_index(np.argmax(x), x.shape)
        elif self.placement == "fixed":
            r, c = 0, 0
        else:
            raise ValueError(f"unknown placement {self.placement!r}")
        return r + self.offset[0], c + self.offset[1]

    def inject(self, x):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        out = np.array(x, dtype=np.float64)
        if self.amplitude == 0:
            return out
        if self.patch > min(x.shape):
            raise ValueError("patch does not fit in the image")
        r0, c0 = self.centre(x)
        rows = (r0 - self.patch // 2 + np.arange(self.patch)) % x.shape[0]
        cols = (c0 - self.patch // 2 + np.arange(self.patch)) % x.shape[1]
        out[np.ix_(rows, cols)] += self.texture()
        return out

    def predict(self, X):
        base = self.base if self.base is not None else Identity()
        return np.stack([self.inject(x) for x in base.predict(X)])

    @property
    def identifier(self):
        base = getattr(self.base, "identifier", "identity")
        return f"hallucinator:base={base},amp={self.amplitude:g},angle={self.angle:g}"


# -- registry -----------------------------------------------------------------


def _parse_value(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def parse_model_id(text):
    """``'name:k=v,k=v'`` or ``'name:token'`` into ``(name, kwargs)``."""
    name, _, rest = text.strip().partition(":")
    kwargs = {}
    if rest:
        for part in rest.split(","):
            key, eq, value = part.partition("=")
            if eq:
                kwargs[key.strip()] = _parse_value(value.strip())
            else:
                kwargs["_"] = _parse_value(key.strip())
    return name.strip(), kwargs


def make_reconstructor(identifier, psf=None, noise_sigma=None):
    """Build a model from an identifier such as ``'tikhonov:sure'``,
    ``'wiener:snr=100'``, ``'tikhonov:sure+softthresh'`` or
    ``'hallucinator:base=tikhonov,amp=0.2,angle=45'``.

    ``noise_sigma`` must be in the units the model sees.
    """
    if not isinstance(identifier, str):
        return clone(identifier)
    if "+" in identifier and not identifier.startswith("hallucinator"):
        stages = [make_reconstructor(s, psf, noise_sigma) for s in identifier.split("+")]
        return Pipeline([(f"stage{i}", s) for i, s in enumerate(stages)])
    name, kw = parse_model_id(identifier)
    if name == "identity":
        return Identity()
    if name == "tikhonov":
        lam = kw.pop("lam", kw.pop("_", "sure"))
        gamma = kw.pop("gamma", "laplacian")
        model = TikhonovDeconvolver(psf, lam, noise_sigma, gamma)
    elif name == "wiener":
        model = WienerDeconvolver(psf, float(kw.pop("snr", kw.pop("_", 100.0))))
    elif name == "softthresh":
        model = WaveletSoftThreshold(
            wavelet=kw.pop("wavelet", "db4"),
            levels=int(kw.pop("levels", 3)),
            k=float(kw.pop("k", 3.0)),
            noise_sigma=noise_sigma,
        )
    elif name == "hallucinator":
        base = make_reconstructor(str(kw.pop("base", "tikhonov")), psf, noise_sigma)
        model = HallucinationInjector(
            base,
            amplitude=float(kw.pop("amp", 0.2)),
            angle=float(kw.pop("angle", 45.0)),
            frequency=float(kw.pop("freq", 0.4)),
            patch=int(kw.pop("patch", 16)),
        )
    else:
        raise ValueError(f"unknown reconstructor {name!r}")
    if kw:
        raise ValueError(f"unused options {sorted(kw)} for reconstructor {name!r}")
    if name in ("tikhonov", "wiener") and psf is None:
        raise ValueError(f"{name} needs a psf")
    return model


def model_identifier(model):
    if isinstance(model, Pipeline):
        return "+".join(model_identifier(step) for _, step in model.steps)
    return getattr(model, "identifier", type(model).__name__)


__all__ = [
    "BaseReconstructor",
    "HallucinationInjector",
    "Identity",
    "SureResult",
    "TikhonovDeconvolver",
    "WaveletSoftThreshold",
    "WienerDeconvolver",
    "default_lambda_grid",
    "laplacian_symbol",
    "make_reconstructor",
    "model_identifier",
    "oriented_texture",
    "parse_model_id",
    "sure_divergence",
    "sure_select_lambda",
    "tikhonov_deconvolve",
    "tikhonov_filter",
    "wiener_deconvolve",
]
