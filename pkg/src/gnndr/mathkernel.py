"""Numerical primitives: Gaussian CDF, Gauss-Hermite rules, complex Gaussian
sampling and rank-one Hermitian solves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import InvalidArgumentError

MAX_GH_ORDER = 128


@dataclass(frozen=True)
class Rng:
    """Seeded, stream-addressable random source.

    ``(seed, stream_id)`` fully determines the draw sequence; different
    ``stream_id`` values give independent streams (SeedSequence spawn keys).
    """

    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < 2**64:
                raise InvalidArgumentError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "Rng":
        """Derived stream, deterministic in (seed, stream_id, index)."""
        mixed = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), int(index))
        ).generate_state(2, np.uint32)
        return Rng(self.seed, (int(mixed[0]) << 32) | int(mixed[1]))


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`Rng`, a numpy Generator, an int seed or None."""
    if isinstance(rng, Rng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return Rng(0 if rng is None else int(rng)).generator()
    raise InvalidArgumentError(f"cannot build a random generator from {type(rng).__name__}")


def std_normal_cdf(t):
    """Standard normal CDF. Accepts scalars or arrays."""
    return special.ndtr(t)


def std_normal_logcdf(t):
    return special.log_ndtr(t)


def std_normal_quantile(q):
    return special.ndtri(q)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the weight ``exp(-t**2)``."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def tensor2(self):
        """Nodes and weights of the tensor-product rule on the plane.

        Returns ``(t1, t2, w)`` flattened, with ``w`` summing to ``pi``.
        """
        t1, t2 = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        w = np.outer(self.weights, self.weights)
        return t1.ravel(), t2.ravel(), w.ravel()


@lru_cache(maxsize=None)
def _hermite_rule(order: int):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    # enforce exact symmetry; hermgauss is symmetric to rounding
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(order: int) -> QuadratureRule:
    """Gauss-Hermite quadrature rule with ``order`` nodes (1 to 128)."""
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        raise InvalidArgumentError("quadrature order must be an integer")
    if not 1 <= order <= MAX_GH_ORDER:
        raise InvalidArgumentError(f"quadrature order must lie in [1, {MAX_GH_ORDER}], got {order}")
    nodes, weights = _hermite_rule(int(order))
    return QuadratureRule(int(order), nodes, weights)


def sample_cn(rng, mean, variance_per_entry: float, size=None) -> np.ndarray:
    """Draw circularly-symmetric complex Gaussian vectors.

    Each entry has ``E|z - mean|^2 = variance_per_entry``, split evenly
    between independent real and imaginary parts.

    Parameters
    ----------
    rng : Rng or numpy.random.Generator
    mean : complex scalar or array
        Broadcast against ``size``.
    variance_per_entry : float
        Strictly positive.
    size : int or tuple, optional
        Output shape; defaults to ``np.shape(mean)``.
    """
    if not variance_per_entry > 0 or not math.isfinite(variance_per_entry):
        raise InvalidArgumentError("variance_per_entry must be a positive finite real")
    gen = as_generator(rng)
    mean = np.asarray(mean, dtype=complex)
    shape = mean.shape if size is None else size
    scale = math.sqrt(variance_per_entry / 2.0)
    draw = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    return mean + scale * draw


def rank1_inverse_apply(scale: float, u, sigma2: float, rhs) -> np.ndarray:
    """Solve ``(scale * u u^H + sigma2 * I) out = rhs`` by Sherman-Morrison.

    ``u`` and ``rhs`` may carry leading batch dimensions; the vector axis is
    the last one.
    """
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    u = np.asarray(u, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    uh_rhs = np.sum(u.conj() * rhs, axis=-1, keepdims=True)
    norm2 = np.sum(np.abs(u) ** 2, axis=-1, keepdims=True)
    return (rhs - u * (scale * uh_rhs / (sigma2 + scale * norm2))) / sigma2


def rank1_quadratic_form(scale: float, u, sigma2: float, c) -> np.ndarray:
    """``c^H (scale u u^H + sigma2 I)^{-1} c`` (real), batched over leading axes."""
    w = rank1_inverse_apply(scale, u, sigma2, c)
    return np.real(np.sum(np.asarray(c).conj() * w, axis=-1))
