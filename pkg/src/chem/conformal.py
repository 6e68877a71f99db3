"""Split-conformal calibration of per-coefficient interval radii.

Radii are initialized on a first split as an empirical quantile of the
absolute coefficient residuals, then rescaled on a second split through a
non-decreasing family ``g_lambda`` so that each coefficient's interval
reaches the finite-sample ``(1 - alpha)(1 + 1/N)`` quantile.
"""

import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_alpha

EPS = 1e-12
DEFAULT_BOUNDS = (0.0, 1e6)
_CHUNK = 1 << 16


class HashMismatchError(ValueError):
    """A stored digest does not match the data it describes."""


class ConformalWarning(UserWarning):
    pass


# -- calibration families -----------------------------------------------------


@dataclass(frozen=True)
class MultiplicativeFamily:
    """``g_lambda(r) = lambda * max(r, eps)``."""

    eps: float = EPS
    name = "multiplicative"

    def __call__(self, lam, r):
        return np.asarray(lam) * np.maximum(r, self.eps)

    def solve(self, residual, r, a, b):
        """Smallest ``lambda`` in ``[a, b]`` with ``g_lambda(r) >= residual``, clamped."""
        return np.clip(np.abs(residual) / np.maximum(r, self.eps), a, b)


@dataclass(frozen=True)
class AdditiveFamily:
    """``g_lambda(r) = r + lambda``."""

    eps: float = EPS
    name = "additive"

    def __call__(self, lam, r):
        return np.asarray(r) + np.asarray(lam)

    def solve(self, residual, r, a, b):
        return np.clip(np.abs(residual) - r, a, b)


FAMILIES = {"multiplicative": MultiplicativeFamily, "additive": AdditiveFamily}


def make_family(name, eps=EPS):
    if not isinstance(name, str):
        return name
    try:
        return FAMILIES[name](eps)
    except KeyError:
        raise ValueError(f"unknown calibration family {name!r}; choose from {sorted(FAMILIES)}") from None


def lambda_by_bisection(residual, r, family, a, b, tol=1e-13, max_iter=200):
    """``inf {lambda in [a, b] : g_lambda(r) >= |residual|}`` by bisection.

    Returns ``b`` when no lambda in the interval satisfies the condition.
    """
    target = abs(residual)
    if family(a, r) >= target:
        return a
    if family(b, r) < target:
        return b
    lo, hi = a, b
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if family(mid, r) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return hi


# -- quantiles ----------------------------------------------------------------


def conformal_level(alpha, n):
    """Finite-sample quantile level ``(1 - alpha)(1 + 1/n)``."""
    return (1.0 - alpha) * (1.0 + 1.0 / n)


def order_statistic_index(level, n):
    """1-based rank ``ceil(level * n)`` clipped to ``[1, n]``.

    A relative slack of 1e-12 absorbs rounding in ``level * n``, so that
    e.g. 0.9 * (10/9) * 9 selects rank 9 rather than overflowing.
    """
    k = math.ceil(level * n * (1.0 - 1e-12))
    return int(min(max(k, 1), n))


def column_order_statistic(values, k):
    """k-th smallest (1-based) entry of every column, in column chunks."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(values.shape[1])
    for start in range(0, values.shape[1], _CHUNK):
        block = values[:, start : start + _CHUNK]
        out[start : start + _CHUNK] = np.partition(block, k - 1, axis=0)[k - 1]
    return out


def _as_residuals(residuals, name):
    res = np.abs(np.asarray(residuals, dtype=np.float64))
    if res.ndim == 1:
        res = res[:, None]
    if res.ndim != 2 or res.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (samples, coefficients) array")
    if not np.all(np.isfinite(res)):
        raise ValueError(f"{name} contains non-finite values")
    return res


def init_radius(residuals, alpha, eps=EPS):
    """Initial radii: per-coefficient conformal quantile of ``|residuals|``.

    ``residuals`` has shape ``(N1, t)``. The rank is
    ``ceil((1 - alpha)(1 + 1/N1) N1)`` clipped to ``N1``; results are
    floored at ``eps``.
    """
    alpha = check_alpha(alpha)
    res = _as_residuals(residuals, "residuals")
    n = res.shape[0]
    if n < 10:
        warnings.warn(f"only {n} samples to initialize radii; at least 10 are advised", ConformalWarning, stacklevel=2)
    k = order_statistic_index(conformal_level(alpha, n), n)
    return np.maximum(column_order_statistic(res, k), eps)


# -- calibration --------------------------------------------------------------


@dataclass(frozen=True)
class RadiusModel:
    """Initial radii and calibrated multipliers, one pair per coefficient."""

    radii: np.ndarray
    lambdas: np.ndarray
    family: str = "multiplicative"
    bounds: tuple = DEFAULT_BOUNDS
    alpha: float = 0.01
    eps: float = EPS

    def __post_init__(self):
        r = np.array(self.radii, dtype=np.float64).ravel()
        lam = np.array(self.lambdas, dtype=np.float64).ravel()
        if r.shape != lam.shape:
            raise ValueError("radii and lambdas must have the same length")
        if np.any(r < 0):
            raise ValueError("radii must be non-negative")
        a, b = self.bounds
        if np.any((lam < a) | (lam > b)):
            raise ValueError("lambdas must lie within the bounds")
        r.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "bounds", (float(a), float(b)))

    @property
    def size(self):
        return self.radii.size

    def half_widths(self, radii=None):
        """``g_lambda_j(r_j)``; ``radii`` overrides the stored initial radii."""
        r = self.radii if radii is None else np.asarray(radii, dtype=np.float64)
        return make_family(self.family, self.eps)(self.lambdas, r)


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated radii plus the diagnostics of the calibration split."""

    model: RadiusModel
    n_samples: int
    level: float
    clipped_low: float
    clipped_high: float
    warnings: tuple = ()
    meta: dict = field(default_factory=dict)

    def half_widths(self, radii=None):
        return self.model.half_widths(radii)

    def diagnostics(self):
        return {
            "n_samples": self.n_samples,
            "level": self.level,
            "clipped_low": self.clipped_low,
            "clipped_high": self.clipped_high,
            "warnings": list(self.warnings),
        }


def calibrate_lambda(residuals, radii, alpha, family="multiplicative", bounds=DEFAULT_BOUNDS, eps=EPS):
    """Calibrate one multiplier per coefficient on ``residuals`` of shape ``(N, t)``.

    ``radii`` holds the initial radii, either one per coefficient or one
    row per sample. Each sample gives the smallest admissible
    ``lambda_j^n``; ``lambda_j`` is their order statistic of rank
    ``ceil((1 - alpha)(1 + 1/N) N)``. When that level exceeds 1 the upper
    bound is used and a warning is recorded.
    """
    alpha = check_alpha(alpha)
    a, b = (float(v) for v in bounds)
    if not a < b:
        raise ValueError(f"calibration bounds must satisfy a < b, got {bounds!r}")
    res = _as_residuals(residuals, "residuals")
    n, t = res.shape
    r = np.asarray(radii, dtype=np.float64)
    if r.shape not in ((t,), (n, t)):
        raise ValueError(f"radii must have shape ({t},) or ({n}, {t}), got {r.shape}")
    fam = make_family(family, eps)
    level = conformal_level(alpha, n)
    notes = []
    # the slack keeps e.g. N = 9, alpha = 0.1 (level exactly 1) on the quantile path
    if level > 1.0 + 1e-12:
        msg = (
            f"{n} calibration samples are too few for alpha={alpha}: quantile level {level:.4f} exceeds 1, "
            f"using the upper bound {b:g}; need at least {math.ceil(1.0 / alpha) - 1}"
        )
        warnings.warn(msg, ConformalWarning, stacklevel=2)
        notes.append(msg)
        lambdas = np.full(t, b)
    else:
        k = order_statistic_index(level, n)
        lambdas = np.empty(t)
        for start in range(0, t, _CHUNK):
            cols = slice(start, start + _CHUNK)
            rr = r[cols] if r.ndim == 1 else r[:, cols]
            lam_n = fam.solve(res[:, cols], rr, a, b)
            lambdas[cols] = np.partition(lam_n, k - 1, axis=0)[k - 1]
    radii_out = r if r.ndim == 1 else np.zeros(t)
    model = RadiusModel(radii_out, lambdas, fam.name, (a, b), alpha, eps)
    return CalibrationResult(
        model=model,
        n_samples=n,
        level=min(level, 1.0),
        clipped_low=float(np.mean(lambdas <= a)),
        clipped_high=float(np.mean(lambdas >= b)),
        warnings=tuple(notes),
    )


# -- intervals and coverage -----------------------------------------------------


@dataclass(frozen=True)
class Intervals:
    centers: np.ndarray
    half_widths: np.ndarray

    @property
    def lower(self):
        return self.centers - self.half_widths

    @property
    def upper(self):
        return self.centers + self.half_widths

    def contains(self, values):
        return np.abs(np.asarray(values) - self.centers) <= self.half_widths


def predict_intervals(centers, cal, radii=None):
    """Intervals ``centers +- g_lambda(r)`` for coefficient rows ``centers``."""
    centers = np.asarray(centers, dtype=np.float64)
    half = cal.half_widths(radii)
    if centers.shape[-1] != half.shape[-1]:
        raise ValueError(f"expected {half.shape[-1]} coefficients, got {centers.shape[-1]}")
    return Intervals(centers, np.broadcast_to(half, centers.shape))


def coverage_rate(truth, centers, cal, radii=None):
    """Per-coefficient and mean empirical coverage of the truths.

    Returns ``(per_coefficient, mean)``.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    inside = predict_intervals(np.atleast_2d(centers), cal, radii).contains(truth)
    per_j = inside.mean(axis=0)
    return per_j, float(per_j.mean())


# -- serialization ------------------------------------------------------------

SIDECAR_VERSION = 1


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def calibration_to_files(cal, json_path, bin_path):
    """Write a JSON description and a little-endian float64 sidecar.

    The binary file holds the radii, then the lambdas, then any extra
    arrays listed in ``meta['arrays']``; the JSON records their order,
    lengths and the binary file's SHA-256.
    """
    arrays = {"radii": cal.model.radii, "lambdas": cal.model.lambdas}
    meta = dict(cal.meta)
    extra = meta.pop("arrays", {}) or {}
    for name, arr in extra.items():
        arrays[name] = np.asarray(arr, dtype=np.float64).ravel()
    blob = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in arrays.values())
    doc = {
        "version": SIDECAR_VERSION,
        "family": cal.model.family,
        "bounds": list(cal.model.bounds),
        "alpha": cal.model.alpha,
        "eps": cal.model.eps,
        "diagnostics": cal.diagnostics(),
        "binary": {
            "file": os.path.basename(os.fspath(bin_path)),
            "sha256": _sha256(blob),
            "dtype": "<f8",
            "arrays": [[name, int(a.size)] for name, a in arrays.items()],
        },
        "meta": meta,
    }
    with open(bin_path, "wb") as f:
        f.write(blob)
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    with open(json_path, "w") as f:
        f.write(text)
    return doc


def calibration_from_files(json_path, bin_path=None):
    """Inverse of :func:`calibration_to_files`; verifies the binary hash."""
    with open(json_path) as f:
        doc = json.load(f)
    if doc.get("version") != SIDECAR_VERSION:
        raise ValueError(f"unsupported calibration version {doc.get('version')!r}")
    if bin_path is None:
        bin_path = os.path.join(os.path.dirname(os.fspath(json_path)), doc["binary"]["file"])
    with open(bin_path, "rb") as f:
        blob = f.read()
    if _sha256(blob) != doc["binary"]["sha256"]:
        raise HashMismatchError("calibration binary does not match its recorded hash")
    total = sum(n for _, n in doc["binary"]["arrays"])
    if len(blob) != 8 * total:
        raise ValueError("calibration binary has the wrong length")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    arrays, offset = {}, 0
    for name, n in doc["binary"]["arrays"]:
        arrays[name] = flat[offset : offset + n]
        offset += n
    model = RadiusModel(
        arrays.pop("radii"), arrays.pop("lambdas"), doc["family"], tuple(doc["bounds"]), doc["alpha"], doc["eps"]
    )
    diag = doc["diagnostics"]
    meta = dict(doc.get("meta", {}))
    if arrays:
        meta["arrays"] = arrays
    return CalibrationResult(
        model=model,
        n_samples=diag["n_samples"],
        level=diag["level"],
        clipped_low=diag["clipped_low"],
        clipped_high=diag["clipped_high"],
        warnings=tuple(diag["warnings"]),
        meta=meta,
    )
