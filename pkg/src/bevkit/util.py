import os
from typing import Optional, Sequence, Tuple

import numpy as np


class FormatError(ValueError):
    """Raised when a file on disk does not follow the expected layout."""


class NumericalError(ArithmeticError):
    """Raised when a numerical recursion breaks down (e.g. a covariance loses
    positive definiteness)."""


def check_same_length(a: Sequence, b: Sequence, a_name: str, b_name: str) -> None:
    """Raise if two sequences differ in length."""
    if len(a) != len(b):
        raise ValueError(
            f"{a_name} and {b_name} must have the same length, but they have "
            f"lengths {len(a)} and {len(b)}."
        )


def check_shape(arr: np.ndarray, expected: Tuple[int, ...], name: str) -> None:
    """Raise if ``arr`` does not have shape ``expected``."""
    if tuple(arr.shape) != tuple(expected):
        raise ValueError(
            f"{name} is expected to have shape {tuple(expected)}, but it has shape "
            f"{tuple(arr.shape)}."
        )


def check_finite(arr: np.ndarray, name: str) -> None:
    """Raise if ``arr`` contains NaN or infinite values."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must only contain finite values.")


def as_float_vector(values, name: str, length: Optional[int] = None) -> np.ndarray:
    """Convert ``values`` to a finite 1D float64 array, optionally checking length."""
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(
            f"{name} must be one-dimensional, but it has shape {arr.shape}."
        )
    if length is not None and arr.shape[0] != length:
        raise ValueError(
            f"{name} is expected to have length {length}, but it has length "
            f"{arr.shape[0]}."
        )
    check_finite(arr, name)
    return arr


def get_rng(seed: Optional[int]) -> np.random.Generator:
    """Return the seeded generator used by every stochastic routine (PCG64)."""
    return np.random.default_rng(seed)


def get_thread_count(default: int = 1) -> int:
    """Read the worker cap from ``BEVKIT_THREADS``; falls back to ``default``."""
    raw = os.environ.get("BEVKIT_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        n_threads = int(raw)
    except ValueError:
        raise ValueError(f"BEVKIT_THREADS must be an integer, got {raw!r}.")
    if n_threads < 1:
        raise ValueError(f"BEVKIT_THREADS must be at least 1, got {n_threads}.")
    return n_threads


def ordered_map(fnc, items: Sequence, n_threads: int = 1) -> list:
    """
    Apply ``fnc`` to each item, possibly on a thread pool.

    Results are always returned in input order so that any reduction over them
    is independent of the number of threads.
    """
    if n_threads <= 1 or len(items) <= 1:
        return [fnc(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fnc, items))


def dataclass_from_dict(cls, data: dict, context: Optional[str] = None):
    """
    Instantiate the dataclass ``cls`` from ``data``, rejecting unknown keys.

    ``context`` names the enclosing record in error messages.
    """
    from dataclasses import fields

    if not isinstance(data, dict):
        raise TypeError(f"Expected a mapping for {context or cls.__name__}.")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f" in {context}" if context else ""
        raise ValueError(f"Unknown configuration key(s){where}: {', '.join(unknown)}")
    return cls(**data)
