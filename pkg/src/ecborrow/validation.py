"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when user-supplied data violates a documented precondition."""


class NumericalError(RuntimeError):
    """Raised when a fit or estimate fails for numerical reasons."""


def as_float_matrix(x, name: str = "X") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d array, got ndim={x.ndim}")
    if not np.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")
    return x


def as_float_vector(x, name: str = "y") -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")
    return x


def as_binary_vector(x, name: str = "a") -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.isin(x, (0.0, 1.0)).all():
        raise ValidationError(f"{name} must contain only 0/1 values")
    return x


def check_consistent_rows(*arrays, names: tuple[str, ...] = ()) -> int:
    lengths = [a.shape[0] for a in arrays]
    if len(set(lengths)) > 1:
        labels = names if names else tuple(f"arg{i}" for i in range(len(arrays)))
        detail = ", ".join(f"{n}={l}" for n, l in zip(labels, lengths))
        raise ValidationError(f"inconsistent row counts: {detail}")
    return lengths[0]


def check_is_fitted(obj, attr: str) -> None:
    if getattr(obj, attr, None) is None:
        raise ValidationError(
            f"{type(obj).__name__} is not fitted yet; call fit() first"
        )


def readonly(a: np.ndarray) -> np.ndarray:
    """Return ``a`` with its write flag cleared (shared-state safety)."""
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a
