"""Capped conformal hallucination scores and the experiment drivers built on them.

The score of coefficient ``j`` on one image is the part of the residual
``|Phi(X)_j - Y_j|`` lying beyond the calibrated radius ``R_j``, capped at
``theta``. Averaging over images gives per-coefficient scores, and their
mean over coefficients is the aggregate.
"""

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_alpha, check_paired_stacks, check_positive
from .conformal import (
    DEFAULT_BOUNDS,
    EPS,
    HashMismatchError,
    calibrate_lambda,
    coverage_rate,
    init_radius,
    predict_intervals,
)
from .forward import canonical_hash, gaussian_psf, make_dataset, make_test_dataset
from .reconstructors import Identity, make_reconstructor, model_identifier
from .transforms import CoefficientField, SubbandRMSNormalizer, make_transform
from .transforms.estimators import finest_scales, keep_mask, reconstruct_filtered
from .transforms.shearlet import ShearletSpec


# -- scores -------------------------------------------------------------------


def _values(c):
    return np.asarray(c.values) if isinstance(c, CoefficientField) else np.asarray(c, dtype=np.float64)


def chem_per_coefficient(pred, truth, radii, theta=1.0):
    """``min((|pred - truth| - radii)_+, theta)`` elementwise.

    ``pred`` and ``truth`` are coefficient fields or arrays whose last axis
    runs over coefficients.
    """
    theta = check_positive(theta, "theta")
    if isinstance(pred, CoefficientField) and isinstance(truth, CoefficientField):
        if pred.layout != truth.layout:
            raise ValueError("prediction and truth coefficients have different layouts")
        if pred.normalized != truth.normalized:
            raise ValueError("prediction and truth coefficients differ in normalization")
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ValueError(f"coefficient shapes differ: {p.shape} vs {t.shape}")
    excess = np.abs(p - t) - np.asarray(radii, dtype=np.float64)
    return np.minimum(np.maximum(excess, 0.0), theta)


def hoeffding_bound(theta, delta, m):
    """Half-width ``theta * sqrt(log(2/delta) / (2m))`` of the two-sided Hoeffding interval."""
    if not theta >= 0:
        raise ValueError("theta must be non-negative")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    return theta * math.sqrt(math.log(2.0 / delta) / (2.0 * m))


def hoeffding_sample_size(theta, delta, half_width):
    """Smallest ``m`` whose Hoeffding half-width is at most ``half_width``."""
    check_positive(half_width, "half_width")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    return max(1, math.ceil(theta**2 * math.log(2.0 / delta) / (2.0 * half_width**2)))


class ScoreAccumulator:
    """Running column sums of score rows, in a fixed order."""

    def __init__(self, size, keep_rows=False):
        self.n = 0
        self.total = np.zeros(size)
        self.total_sq = np.zeros(size)
        self.rows = [] if keep_rows else None

    def add(self, scores):
        scores = np.atleast_2d(scores)
        for row in scores:
            self.total += row
            self.total_sq += row * row
            self.n += 1
        if self.rows is not None:
            self.rows.append(np.array(scores))

    def mean(self):
        return self.total / self.n

    def std(self):
        m = self.mean()
        return np.sqrt(np.maximum(self.total_sq / self.n - m * m, 0.0))

    def matrix(self):
        return None if self.rows is None else np.concatenate(self.rows)


@dataclass
class ChemReport:
    """Scores of one model on one test set."""

    per_coefficient: np.ndarray
    aggregate: float
    theta: float
    n_images: int
    alpha: float = None
    delta: float = None
    hoeffding: float = None
    per_coefficient_std: np.ndarray = None
    per_image: np.ndarray = None
    layout: object = None
    meta: dict = field(default_factory=dict)

    def per_scale(self):
        """Mean score over the coefficients of each scale index."""
        if self.layout is None:
            return {}
        scales = self.layout.coefficient_scales()
        return {int(s): float(self.per_coefficient[scales == s].mean()) for s in sorted(set(scales.tolist()))}

    def per_subband(self):
        if self.layout is None:
            return []
        return [float(self.per_coefficient[sb.slice].mean()) for sb in self.layout.subbands]

    def standardized(self, mode="across"):
        return standardize_scores(self, mode)

    def to_dict(self):
        return {
            "aggregate": self.aggregate,
            "theta": self.theta,
            "alpha": self.alpha,
            "n_images": self.n_images,
            "delta": self.delta,
            "hoeffding_half_width": self.hoeffding,
            "n_coefficients": int(self.per_coefficient.size),
            "per_scale": {str(k): v for k, v in self.per_scale().items()},
            "per_subband": self.per_subband(),
            "meta": self.meta,
        }


def chem_aggregate(scores, theta=1.0, delta=None, layout=None, keep_matrix=True):
    """Report for a score matrix of shape ``(M, t)``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[None]
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] == 0:
        raise ValueError("scores must be a non-empty (images, coefficients) matrix")
    acc = ScoreAccumulator(scores.shape[1], keep_matrix)
    acc.add(scores)
    return _report(acc, theta, delta, layout)


def _report(acc, theta, delta, layout, alpha=None, meta=None):
    per_j = acc.mean()
    return ChemReport(
        per_coefficient=per_j,
        aggregate=float(per_j.mean()),
        theta=float(theta),
        n_images=acc.n,
        alpha=alpha,
        delta=delta,
        hoeffding=None if delta is None else hoeffding_bound(theta, delta, acc.n),
        per_coefficient_std=acc.std(),
        per_image=acc.matrix(),
        layout=layout,
        meta=dict(meta or {}),
    )


# -- standardization and maps ----------------------------------------------------


@dataclass(frozen=True)
class StandardizedScores:
    values: np.ndarray
    mean: float
    std: object
    guarded: object
    mode: str


def standardize_scores(scores, mode="across", per_coefficient_std=None, tiny=1e-15):
    """Centre per-coefficient scores on their mean and divide by a spread.

    ``mode='across'`` divides by the population standard deviation of the
    per-coefficient scores; ``mode='per_image'`` divides coefficient ``j``
    by the standard deviation of its score over test images. Zero spreads
    give zero standardized values and are flagged in ``guarded``.
    """
    if isinstance(scores, ChemReport):
        if per_coefficient_std is None:
            per_coefficient_std = scores.per_coefficient_std
        scores = scores.per_coefficient
    h = np.asarray(scores, dtype=np.float64)
    mean = float(h.mean())
    centred = h - mean
    if mode == "across":
        std = float(h.std())
        if std <= tiny:
            return StandardizedScores(np.zeros_like(h), mean, std, True, mode)
        return StandardizedScores(centred / std, mean, std, False, mode)
    if mode == "per_image":
        if per_coefficient_std is None:
            raise ValueError("per-image standardization needs per-coefficient standard deviations")
        std = np.asarray(per_coefficient_std, dtype=np.float64)
        guarded = std <= tiny
        values = np.where(guarded, 0.0, centred / np.where(guarded, 1.0, std))
        return StandardizedScores(values, mean, std, guarded, mode)
    raise ValueError(f"unknown standardization mode {mode!r}")


def hallucination_keep(standardized, layout, scale_count=2, threshold=0.5):
    """Coefficients scoring above ``threshold`` in the ``scale_count`` finest detail scales.

    ``scale_count=None`` keeps every detail scale.
    """
    h = standardized.values if isinstance(standardized, StandardizedScores) else np.asarray(standardized)
    if h.shape != (layout.size,):
        raise ValueError(f"expected {layout.size} standardized scores, got shape {h.shape}")
    count = max(layout.detail_scales()) if scale_count is None else scale_count
    return (h > threshold) & keep_mask(finest_scales(count), layout)


def hallucination_map(standardized, layout, transform=None, scale_count=2, threshold=0.5, coefficients=None):
    """Image built from the flagged coefficients only.

    Flagged coefficients carry ``coefficients`` (raw, e.g. of a prediction)
    when given and a unit value otherwise, so the default map is a sum of
    the flagged synthesis atoms.
    """
    keep = hallucination_keep(standardized, layout, scale_count, threshold)
    if coefficients is None:
        field_ = CoefficientField(layout, np.ones(layout.size))
    elif isinstance(coefficients, CoefficientField):
        field_ = coefficients
    else:
        field_ = CoefficientField(layout, coefficients)
    return reconstruct_filtered(field_, keep, transform)


# -- estimator ----------------------------------------------------------------


class ChemEstimator(BaseEstimator):
    """Calibrate coefficient intervals for a reconstruction model and score models against them.

    Parameters
    ----------
    model : reconstructor used during calibration and, by default, scoring.
    transform : 'haar', 'db4', 'db8' or 'shearlet'.
    levels : wavelet depth.
    scales, shear_levels : shearlet configuration.
    alpha, theta : miscoverage level and score cap.
    family, bounds, eps : calibration family ``g``, its lambda range and radius floor.
    normalize : divide coefficients by subband RMS fitted on the first split's
        truths; ``'auto'`` does so for shearlets only.
    n_init : size of the first (radius initialization) split in :meth:`fit`;
        ``None`` splits the pairs evenly.
    """

    def __init__(self, model=None, transform="db8", levels=4, scales=3, shear_levels=(1, 2, 2), alpha=0.01,
                 theta=1.0, family="multiplicative", bounds=DEFAULT_BOUNDS, eps=EPS, normalize="auto", batch_size=16,
                 n_init=None):
        self.model = model
        self.transform = transform
        self.levels = levels
        self.scales = scales
        self.shear_levels = shear_levels
        self.alpha = alpha
        self.theta = theta
        self.family = family
        self.bounds = bounds
        self.eps = eps
        self.normalize = normalize
        self.batch_size = batch_size
        self.n_init = n_init

    # coefficients

    def _model(self, model=None):
        if model is not None:
            return model
        return self.model if self.model is not None else Identity()

    def _normalizes(self):
        if self.normalize == "auto":
            return self.transform == "shearlet"
        return bool(self.normalize)

    def coefficients(self, images):
        """Coefficient rows of ``images`` in the calibrated (possibly normalized) domain."""
        C = self.transform_.transform(images)
        if self.normalizer_ is not None:
            C = self.normalizer_.transform(C)
        return C

    def _batches(self, n):
        step = max(1, int(self.batch_size))
        return [slice(i, min(i + step, n)) for i in range(0, n, step)]

    def _residuals(self, X, Y, model):
        rows = []
        for b in self._batches(X.shape[0]):
            rows.append(np.abs(self.coefficients(model.predict(X[b])) - self.coefficients(Y[b])))
        return np.concatenate(rows)

    # fitting

    def fit(self, X, y):
        """Split the pairs (first ``n_init`` initialize radii, the rest calibrate)."""
        X, Y = check_paired_stacks(X, y)
        n1 = X.shape[0] // 2 if self.n_init is None else int(self.n_init)
        if n1 < 1 or X.shape[0] - n1 < 1:
            raise ValueError("need at least two pairs to split into initialization and calibration sets")
        return self.fit_split(X[:n1], Y[:n1], X[n1:], Y[n1:])

    def fit_split(self, X1, Y1, X2, Y2):
        alpha = check_alpha(self.alpha)
        check_positive(self.theta, "theta")
        X1, Y1 = check_paired_stacks(X1, Y1)
        X2, Y2 = check_paired_stacks(X2, Y2)
        model = self._model()
        self.transform_ = make_transform(self.transform, self.levels, self.scales, self.shear_levels)
        self.transform_.fit(Y1)
        self.layout_ = self.transform_.layout_
        self.normalizer_ = None
        if self._normalizes():
            self.normalizer_ = SubbandRMSNormalizer(self.layout_, self.eps).fit(self.transform_.transform(Y1))
        self.radii_ = init_radius(self._residuals(X1, Y1, model), alpha, self.eps)
        cal = calibrate_lambda(self._residuals(X2, Y2, model), self.radii_, alpha, self.family, self.bounds, self.eps)
        self.calibration_ = replace(cal, meta=self._meta(model))
        self.half_widths_ = self.calibration_.half_widths()
        return self

    def _meta(self, model):
        meta = {
            "transform": self.transform_.describe(),
            "normalized": self.normalizer_ is not None,
            "transform_hash": self.transform_hash(),
            "model": model_identifier(model),
        }
        if self.normalizer_ is not None:
            meta["arrays"] = {"rms": self.normalizer_.rms_}
        return meta

    def transform_hash(self):
        check_is_fitted(self, "transform_")
        return canonical_hash({"transform": self.transform_.describe(), "normalized": self.normalizer_ is not None})

    def expected_transform_hash(self, image_shape):
        """Hash :meth:`transform_hash` would give after fitting on ``image_shape`` images."""
        T = make_transform(self.transform, self.levels, self.scales, self.shear_levels)
        T.fit(np.zeros((1,) + tuple(image_shape)))
        return canonical_hash({"transform": T.describe(), "normalized": self._normalizes()})

    @classmethod
    def from_calibration(cls, cal, model=None, **params):
        """Rebuild a fitted estimator from a stored calibration."""
        meta = cal.meta
        est = cls(model=model, alpha=cal.model.alpha, family=cal.model.family, bounds=cal.model.bounds,
                  eps=cal.model.eps, **params)
        kind = meta["transform"]["kind"]
        layout_shape = tuple(meta["transform"]["image_shape"])
        if kind.startswith("wavelet:"):
            est.set_params(transform=kind.split(":", 1)[1], levels=meta["transform"]["levels"])
        else:
            spec = ShearletSpec.from_kind(kind)
            est.set_params(transform="shearlet", scales=spec.scales, shear_levels=spec.shear_levels)
        est.transform_ = make_transform(est.transform, est.levels, est.scales, est.shear_levels)
        est.transform_.fit(np.zeros((1,) + layout_shape))
        est.layout_ = est.transform_.layout_
        est.normalizer_ = None
        rms = meta.get("arrays", {}).get("rms")
        if meta.get("normalized"):
            if rms is None:
                raise ValueError("calibration is normalized but carries no subband RMS values")
            norm = SubbandRMSNormalizer(est.layout_, est.eps)
            norm.rms_ = np.asarray(rms)
            norm.guarded_ = norm.rms_ < est.eps
            norm.scale_ = np.concatenate(
                [np.full(sb.length, max(r, est.eps)) for sb, r in zip(est.layout_.subbands, norm.rms_)]
            )
            est.normalizer_ = norm
        est.normalize = bool(meta.get("normalized"))
        if est.transform_hash() != meta.get("transform_hash"):
            raise HashMismatchError("calibration transform hash does not match its transform description")
        est.calibration_ = cal
        est.radii_ = cal.model.radii
        est.half_widths_ = cal.half_widths()
        return est

    # evaluation

    def evaluate(self, X, Y, model=None, delta=0.05, keep_matrix=False, predictions=None):
        """Score ``model`` (default: the calibrated one) on test pairs."""
        check_is_fitted(self, "calibration_")
        X, Y = check_paired_stacks(X, Y)
        model = self._model(model)
        if predictions is not None:
            predictions = np.asarray(predictions, dtype=np.float64)
            if predictions.shape != Y.shape:
                raise ValueError("predictions must match the truths' shape")
        acc = ScoreAccumulator(self.layout_.size, keep_matrix)
        for b in self._batches(X.shape[0]):
            P = model.predict(X[b]) if predictions is None else predictions[b]
            acc.add(chem_per_coefficient(self.coefficients(P), self.coefficients(Y[b]), self.half_widths_, self.theta))
        meta = {"model": model_identifier(model), "transform_hash": self.transform_hash()}
        return _report(acc, self.theta, delta, self.layout_, self.alpha, meta)

    def predict_intervals(self, X, model=None):
        check_is_fitted(self, "calibration_")
        return predict_intervals(self.coefficients(self._model(model).predict(X)), self.calibration_)

    def coverage(self, X, Y, model=None):
        """Per-coefficient and mean coverage of the truths' coefficients."""
        check_is_fitted(self, "calibration_")
        X, Y = check_paired_stacks(X, Y)
        inside = np.zeros(self.layout_.size)
        for b in self._batches(X.shape[0]):
            per_j, _ = coverage_rate(self.coefficients(Y[b]), self.coefficients(self._model(model).predict(X[b])),
                                     self.calibration_)
            inside += per_j * (b.stop - b.start)
        per_j = inside / X.shape[0]
        return per_j, float(per_j.mean())

    def radii(self, raw=False):
        """Calibrated half-widths, in raw coefficient units when ``raw``."""
        check_is_fitted(self, "calibration_")
        if raw and self.normalizer_ is not None:
            return self.normalizer_.inverse_transform(self.half_widths_[None])[0]
        return np.array(self.half_widths_)

    def hallucination_map(self, report, scale_count=2, threshold=0.5, mode="across", coefficients=None):
        return hallucination_map(standardize_scores(report, mode), self.layout_, self.transform_, scale_count,
                                 threshold, coefficients)


# -- perturbation sweep --------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    model: str
    fwhm: float
    mse: float
    chem: float
    per_scale: tuple


@dataclass
class SweepResult:
    rows: list
    transform: str
    n_scales: int

    def header(self):
        return ["model", "fwhm", "mse", "chem"] + [f"chem_scale{s}" for s in range(1, self.n_scales + 1)]

    def to_csv(self, path=None):
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        for r in self.rows:
            cells = [r.model, repr(float(r.fwhm)), repr(r.mse), repr(r.chem)] + [repr(v) for v in r.per_scale]
            buf.write(",".join(cells) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def for_model(self, model):
        return [r for r in self.rows if r.model == model]


def perturbation_sweep(models, fwhms, scene, n_calibration, n_test, nominal_fwhm=15.0, noise_sigma="auto",
                       estimator=None, reference=None, seed=0, test_seed=None):
    """Calibrate at the nominal PSF width, then score under perturbed widths.

    Models always deconvolve with the nominal PSF while test inputs are
    blurred with each width in ``fwhms``; the noise level and normalization
    stay those of the calibration data. Each model is calibrated on its own
    residuals unless ``reference`` names a model to calibrate with instead.
    """
    fwhms = sorted(float(f) for f in fwhms)
    if not fwhms:
        raise ValueError("fwhm list is empty")
    psf0 = gaussian_psf(scene.side, nominal_fwhm)
    cal = make_dataset(scene, psf0, n_calibration, noise_sigma, seed=seed)
    tests = {f: make_test_dataset(scene, gaussian_psf(scene.side, f), n_test, cal, seed, test_seed) for f in fwhms}
    sigma_n = cal.noise_sigma_normalized
    template = estimator if estimator is not None else ChemEstimator()
    rows = []
    n_scales = None
    transform_id = None
    for ident in models:
        model = make_reconstructor(ident, psf0, sigma_n)
        calibrator = model if reference is None else make_reconstructor(reference, psf0, sigma_n)
        est = clone(template).set_params(model=calibrator).fit(cal.X, cal.Y)
        transform_id = est.transform_hash()
        name = ident if isinstance(ident, str) else model_identifier(model)
        for f in fwhms:
            test = tests[f]
            P = model.predict(test.X)
            report = est.evaluate(test.X, test.Y, model=model, predictions=P)
            per_scale = report.per_scale()
            n_scales = len(per_scale)
            rows.append(SweepRow(name, f, float(np.mean((P - test.Y) ** 2)), report.aggregate,
                                 tuple(per_scale[s] for s in sorted(per_scale))))
    return SweepResult(rows, transform_id, n_scales)


__all__ = [
    "ChemEstimator",
    "ChemReport",
    "ScoreAccumulator",
    "StandardizedScores",
    "SweepResult",
    "SweepRow",
    "chem_aggregate",
    "chem_per_coefficient",
    "hallucination_keep",
    "hallucination_map",
    "hoeffding_bound",
    "hoeffding_sample_size",
    "perturbation_sweep",
    "standardize_scores",
]
