"""Synthetic scenes and the degradation ``y = h * x + noise`` on the torus."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gamma as gamma_fn

from ._validation import check_image, check_image_stack

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))


def fwhm_to_sigma(fwhm):
    return fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True, eq=False)
class Psf:
    """Point spread function sampled on the image grid.

    The kernel is stored centred: index ``n // 2`` along each axis is the
    origin of the convolution, so ``ifftshift`` moves it to ``(0, 0)``.
    """

    kernel: np.ndarray
    fwhm: float
    sigma: float

    def __post_init__(self):
        k = check_image(self.kernel, "psf kernel").copy()
        if np.any(k < 0):
            raise ValueError("psf kernel must be non-negative")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ValueError(f"psf kernel must sum to 1, sums to {k.sum()!r}")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def shape(self):
        return self.kernel.shape

    def transfer(self):
        """Frequency response on the FFT grid."""
        return np.fft.fft2(np.fft.ifftshift(self.kernel))

    def is_delta(self):
        return np.count_nonzero(self.kernel) == 1 and self.kernel[self.shape[0] // 2, self.shape[1] // 2] == 1.0

    def describe(self):
        return {"shape": list(self.shape), "fwhm": self.fwhm, "sigma": self.sigma}


def gaussian_psf(side, fwhm):
    """Normalized Gaussian kernel on a ``side x side`` grid.

    Pixels are indexed ``1..side`` and the centre sits at ``(side + 1) / 2``,
    which falls between pixels when ``side`` is even.
    """
    side = int(side)
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if not fwhm > 0:
        raise ValueError(f"fwhm must be positive, got {fwhm!r}")
    sigma = fwhm_to_sigma(fwhm)
    k = np.arange(1, side + 1) - (side + 1) / 2.0
    g1 = np.exp(-(k**2) / (2.0 * sigma**2))
    kernel = np.outer(g1, g1)
    kernel /= kernel.sum()
    return Psf(kernel, float(fwhm), float(sigma))


def delta_psf(shape):
    shape = (shape, shape) if np.isscalar(shape) else tuple(shape)
    kernel = np.zeros(shape)
    kernel[shape[0] // 2, shape[1] // 2] = 1.0
    return Psf(kernel, 0.0, 0.0)


def convolve(x, psf):
    """Circular convolution of an image or a stack with ``psf``."""
    X = np.asarray(x, dtype=np.float64)
    if X.shape[-2:] != psf.shape:
        raise ValueError(f"image grid {X.shape[-2:]} does not match psf grid {psf.shape}")
    if psf.is_delta():
        return X.copy()
    return np.fft.ifft2(np.fft.fft2(X) * psf.transfer()).real


@dataclass(frozen=True)
class DegradationConfig:
    psf: Psf
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")


def degrade(x, cfg, rng=None):
    """Blur ``x`` with the configured psf and add seeded white Gaussian noise."""
    x = check_image(x)
    y = convolve(x, cfg.psf)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        y = y + cfg.noise_sigma * rng.standard_normal(y.shape)
    return y


# -- scenes -------------------------------------------------------------------

PROFILES = ("gaussian", "sersic")


@dataclass(frozen=True)
class Source:
    """One analytic light profile; ``x`` is the column and ``y`` the row."""

    x: float
    y: float
    flux: float
    radius: float
    ellipticity: float = 0.0
    angle: float = 0.0
    profile: str = "gaussian"
    sersic_n: float = 1.0

    def __post_init__(self):
        if self.flux < 0:
            raise ValueError("flux must be non-negative")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not 0 <= self.ellipticity < 1:
            raise ValueError("ellipticity must lie in [0, 1)")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")


def _sersic_b(n):
    return 2.0 * n - 1.0 / 3.0 + 4.0 / (405.0 * n)


def _render(src, rows, cols):
    """Surface brightness of ``src`` at the given coordinates."""
    q = 1.0 - src.ellipticity
    c, s = np.cos(src.angle), np.sin(src.angle)
    dx, dy = cols - src.x, rows - src.y
    u = c * dx + s * dy
    v = -s * dx + c * dy
    r2 = u**2 + (v / q) ** 2
    if src.profile == "gaussian":
        return src.flux / (2.0 * np.pi * src.radius**2 * q) * np.exp(-r2 / (2.0 * src.radius**2))
    n = src.sersic_n
    b = _sersic_b(n)
    # integral of exp(-b (r/R)^(1/n)) over the plane
    norm = 2.0 * np.pi * n * src.radius**2 * q * gamma_fn(2.0 * n) / b ** (2.0 * n)
    return src.flux / norm * np.exp(-b * (np.sqrt(r2) / src.radius) ** (1.0 / n))


def render_sources(sources, side, oversample=3):
    """Pixel-averaged image of ``sources`` on a ``side x side`` grid."""
    img = np.zeros((side, side))
    if not sources:
        return img
    offsets = (np.arange(oversample) + 0.5) / oversample - 0.5
    grid = np.arange(side, dtype=np.float64)
    for oy in offsets:
        for ox in offsets:
            rows = (grid + oy)[:, None]
            cols = (grid + ox)[None, :]
            for src in sources:
                img += _render(src, rows, cols)
    return img / oversample**2


@dataclass(frozen=True)
class SceneConfig:
    """Random scene recipe, or a fixed list of ``sources``.

    Source counts are uniform on ``n_sources``; fluxes are log-uniform on
    ``flux_range``; radii are uniform on ``radius_range``; positions keep
    a ``margin`` from the border.
    """

    side: int = 128
    n_sources: tuple = (1, 4)
    flux_range: tuple = (50.0, 2000.0)
    radius_range: tuple = (1.5, 6.0)
    max_ellipticity: float = 0.5
    profiles: tuple = PROFILES
    sersic_n_range: tuple = (0.5, 2.5)
    margin: float = 0.15
    oversample: int = 3
    seed: int = 0
    sources: tuple = None

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("side must be >= 1")
        lo, hi = self.n_sources
        if not 0 <= lo <= hi:
            raise ValueError("n_sources must be an ordered non-negative range")
        if not 0 <= self.flux_range[0] <= self.flux_range[1]:
            raise ValueError("flux_range must be ordered and non-negative")
        for p in self.profiles:
            if p not in PROFILES:
                raise ValueError(f"unknown profile {p!r}")
        if self.sources is not None:
            object.__setattr__(self, "sources", tuple(self.sources))
            for s in self.sources:
                if not (0 <= s.x <= self.side - 1 and 0 <= s.y <= self.side - 1):
                    raise ValueError(f"source at ({s.x}, {s.y}) lies outside the grid")

    def to_dict(self):
        d = asdict(self)
        d["sources"] = None if self.sources is None else [asdict(s) for s in self.sources]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("sources") is not None:
            d["sources"] = tuple(Source(**s) for s in d["sources"])
        for key in ("n_sources", "flux_range", "radius_range", "profiles", "sersic_n_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def draw_sources(cfg, rng):
    if cfg.sources is not None:
        return list(cfg.sources)
    count = int(rng.integers(cfg.n_sources[0], cfg.n_sources[1] + 1))
    lo = cfg.margin * (cfg.side - 1)
    hi = (1.0 - cfg.margin) * (cfg.side - 1)
    f_lo, f_hi = cfg.flux_range
    sources = []
    for _ in range(count):
        x, y = rng.uniform(lo, hi, size=2)
        if f_lo > 0:
            flux = float(np.exp(rng.uniform(np.log(f_lo), np.log(f_hi))))
        else:
            flux = float(rng.uniform(f_lo, f_hi))
        profile = str(rng.choice(cfg.profiles))
        sources.append(
            Source(
                x=float(x),
                y=float(y),
                flux=flux,
                radius=float(rng.uniform(*cfg.radius_range)),
                ellipticity=float(rng.uniform(0.0, cfg.max_ellipticity)),
                angle=float(rng.uniform(0.0, np.pi)),
                profile=profile,
                sersic_n=float(rng.uniform(*cfg.sersic_n_range)),
            )
        )
    return sources


def synthesize_scene(cfg, rng=None):
    """Sum of analytic source profiles sampled on the grid."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return render_sources(draw_sources(cfg, rng), cfg.side, cfg.oversample)


# -- datasets -----------------------------------------------------------------


def sample_seed(seed, index):
    """Independent per-sample stream derived from a base seed."""
    return np.random.default_rng([int(seed), int(index)])


def blurred_peaks(sources, side, psf, oversample=3):
    """Peak of each source after blurring, rendered in isolation."""
    return np.array([convolve(render_sources([s], side, oversample), psf).max() for s in sources])


def canonical_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class Normalization:
    """Affine map ``v -> (v - offset) / scale`` sending truths into [-1, 1]."""

    offset: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, Y):
        lo, hi = float(np.min(Y)), float(np.max(Y))
        if hi <= lo:
            return cls(lo, 1.0)
        return cls((hi + lo) / 2.0, (hi - lo) / 2.0)

    def apply(self, v):
        return (np.asarray(v) - self.offset) / self.scale

    def invert(self, v):
        return np.asarray(v) * self.scale + self.offset


@dataclass
class Dataset:
    """Degraded inputs ``X`` and truths ``Y``, both normalized to training range."""

    X: np.ndarray
    Y: np.ndarray
    psf: Psf
    noise_sigma: float
    normalization: Normalization
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    @property
    def noise_sigma_normalized(self):
        return self.noise_sigma / self.normalization.scale

    def subset(self, index):
        return Dataset(self.X[index], self.Y[index], self.psf, self.noise_sigma, self.normalization, self.manifest)

    def manifest_hash(self):
        return canonical_hash(self.manifest)


def make_truths(scene, n):
    """Ground truths and their sources; sample ``i`` uses the stream ``(seed, i)``."""
    truths, sources = [], []
    for i in range(n):
        srcs = draw_sources(scene, sample_seed(scene.seed, i))
        sources.append(srcs)
        truths.append(render_sources(srcs, scene.side, scene.oversample))
    return np.stack(truths), sources


def make_dataset(scene, psf, n, noise_sigma="auto", seed=0, normalization=None):
    """Draw ``n`` scenes and degrade them.

    ``noise_sigma='auto'`` sets the noise level to the blurred peak of the
    faintest source in the dataset, so its peak signal-to-noise ratio is 1.
    Normalization constants are fitted on the truths unless given.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if psf.shape != (scene.side, scene.side):
        raise ValueError(f"psf grid {psf.shape} does not match scene side {scene.side}")
    Y, sources = make_truths(scene, n)
    peaks = [blurred_peaks(s, scene.side, psf, scene.oversample) for s in sources]
    all_peaks = np.concatenate(peaks) if any(len(p) for p in peaks) else np.zeros(0)
    if noise_sigma == "auto":
        positive = all_peaks[all_peaks > 0]
        if positive.size == 0:
            raise ValueError("cannot derive a noise level from scenes without sources")
        noise_sigma = float(positive.min())
    noise_sigma = float(noise_sigma)
    cfg = DegradationConfig(psf, noise_sigma, seed)
    X = np.stack([degrade(y, cfg, sample_seed(seed, i)) for i, y in enumerate(Y)])
    norm = normalization or Normalization.fit(Y)
    image_peaks = convolve(Y, psf).max(axis=(1, 2))
    snr = {}
    if noise_sigma > 0:
        snr = {
            "source_min": float(all_peaks.min() / noise_sigma) if all_peaks.size else None,
            "source_max": float(all_peaks.max() / noise_sigma) if all_peaks.size else None,
            "image_peak": [float(p / noise_sigma) for p in image_peaks],
        }
    manifest = {
        "n": int(n),
        "scene": scene.to_dict(),
        "psf": psf.describe(),
        "noise_sigma": noise_sigma,
        "noise_seed": int(seed),
        "sample_seeds": [[int(scene.seed), i] for i in range(n)],
        "noise_seeds": [[int(seed), i] for i in range(n)],
        "n_sources": [len(s) for s in sources],
        "normalization": asdict(norm),
        "peak_snr": snr,
    }
    return Dataset(norm.apply(X), norm.apply(Y), psf, noise_sigma, norm, manifest)


def make_test_dataset(scene, psf, n, reference, seed=0, test_seed=None):
    """Test pairs sharing the noise level and normalization of ``reference``.

    Scenes use ``test_seed`` (default ``scene.seed + 1``) and the noise
    stream uses ``seed + 1``, so they never overlap the calibration draws.
    """
    test_scene = replace(scene, seed=scene.seed + 1 if test_seed is None else test_seed)
    return make_dataset(test_scene, psf, n, reference.noise_sigma, seed=seed + 1,
                        normalization=reference.normalization)


def make_experiment_data(scene, psf, n_calibration, n_test, noise_sigma="auto", seed=0, test_psf=None,
                         test_seed=None):
    """Calibration pairs plus independent test pairs, optionally under ``test_psf``."""
    cal = make_dataset(scene, psf, n_calibration, noise_sigma, seed=seed)
    test = make_test_dataset(scene, test_psf or psf, n_test, cal, seed, test_seed)
    return cal, test


def image_peak_snr(Y, psf, noise_sigma, normalization):
    """Peak of each blurred truth over the noise level, in raw units."""
    raw = normalization.invert(check_image_stack(Y))
    return convolve(raw, psf).max(axis=(1, 2)) / noise_sigma
