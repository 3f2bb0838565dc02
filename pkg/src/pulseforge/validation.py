"""Small validation helpers used by the domain types and estimators."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ValidationError


def require(cond: bool, msg: str, exc: type[Exception] = ValidationError) -> None:
    if not cond:
        raise exc(msg)


def as_float_array(x, name: str, dtype=np.float64) -> np.ndarray:
    """Coerce to a floating ndarray, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_finite(arr: np.ndarray, stage: str) -> np.ndarray:
    """Raise NumericError naming the stage if arr has NaN/Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {stage}")
    return arr


def check_monotone(ts_prev: float | None, ts: float, what: str = "timestamp") -> None:
    from .errors import ProtocolError

    if ts_prev is not None and ts < ts_prev:
        raise ProtocolError(f"non-monotone {what}: {ts} after {ts_prev}")
