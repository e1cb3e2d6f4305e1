"""Input checks shared by the estimator classes and the CLI.

scikit-learn's ``check_array`` rejects complex input, so complex-valued
observations are validated here.
"""

from __future__ import annotations

import math
import numbers

import numpy as np

from .errors import InvalidArgumentError


def check_complex_array(a, name: str = "X", ndim: int = 2, n_features=None, allow_none: bool = False):
    """Return ``a`` as a finite complex array with ``ndim`` dimensions.

    1-D input is promoted to a single row when ``ndim == 2``.
    """
    if a is None:
        if allow_none:
            return None
        raise InvalidArgumentError(f"{name} is required")
    arr = np.asarray(a)
    if arr.dtype == object or not (np.issubdtype(arr.dtype, np.number) or arr.dtype == bool):
        raise InvalidArgumentError(f"{name} must be numeric")
    arr = arr.astype(complex)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    if n_features is not None and arr.shape[-1] != n_features:
        raise InvalidArgumentError(f"{name} has {arr.shape[-1]} columns, expected {n_features}")
    return arr


def check_positive(value, name: str, integer: bool = False, allow_zero: bool = False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise InvalidArgumentError(f"{name} must be a real number")
    if integer and int(value) != value:
        raise InvalidArgumentError(f"{name} must be an integer")
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise InvalidArgumentError(f"{name} must be {'nonnegative' if allow_zero else 'positive'} and finite")
    return int(value) if integer else float(value)


def check_finite(value, name: str):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite real number")
    return float(value)


def parse_complex(value, name: str = "value") -> complex:
    """Accept a number, a ``[re, im]`` pair or a Python complex literal string."""
    if isinstance(value, bool):
        raise InvalidArgumentError(f"{name} must be numeric")
    if isinstance(value, numbers.Number):
        out = complex(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        out = complex(check_finite(value[0], name), check_finite(value[1], name))
    elif isinstance(value, str):
        try:
            out = complex(value.replace(" ", ""))
        except ValueError:
            raise InvalidArgumentError(f"{name}: cannot parse {value!r} as complex") from None
    else:
        raise InvalidArgumentError(f"{name} must be a number, a [re, im] pair or a complex string")
    if not (math.isfinite(out.real) and math.isfinite(out.imag)):
        raise InvalidArgumentError(f"{name} must be finite")
    return out


def parse_complex_vector(values, name: str = "vector") -> np.ndarray:
    if not isinstance(values, (list, tuple)) or not values:
        raise InvalidArgumentError(f"{name} must be a nonempty list")
    return np.array([parse_complex(v, f"{name}[{i}]") for i, v in enumerate(values)], dtype=complex)
