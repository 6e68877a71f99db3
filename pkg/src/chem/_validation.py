"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_image(img, name="image"):
    """Return ``img`` as a finite 2D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_image_stack(X, name="X"):
    """Return ``X`` as a finite ``(n, h, w)`` float64 array.

    A single 2D image is promoted to a stack of one.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be an image or a stack of images, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_paired_stacks(X, Y):
    X = check_image_stack(X, "X")
    Y = check_image_stack(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X and Y hold different numbers of samples: {X.shape[0]} != {Y.shape[0]}")
    return X, Y


def check_alpha(alpha):
    if not isinstance(alpha, numbers.Real) or not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0
