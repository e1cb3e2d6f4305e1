"""GMI of the four decoder variants, the fixed-(g, f) GMI and the Bussgang SNR.

All values are in nats per channel use.  The variants are

* ``opt``: output- and CSI-dependent scaling, ``E[log P / omega(y, v)]``;
* ``csi``: CSI-dependent scaling, ``E[log P / E[omega | v]]``;
* ``csf``: constant scaling, ``log P / E[omega]``;
* ``lin``: linear processing, ``E[log P / lmmse_v]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from . import channels as ch
from .channels import ChannelSpec, GaussianInputSpec
from .errors import InvalidArgumentError, InvalidFunctionError
from .estimators import (
    DEFAULT_QUADRATURE_ORDER,
    OMEGA_FLOOR,
    PosteriorEngine,
    lmmse_stats,
    make_engine,
)
from .mathkernel import as_generator

DEFAULT_N_INNER = 64
THETA_MIN = 1e-9
THETA_MAX = 1e6


class DecoderVariant(str, enum.Enum):
    OPT = "opt"
    CSF = "csf"
    CSI = "csi"
    LIN = "lin"

    @classmethod
    def parse(cls, value) -> "DecoderVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown decoder variant {value!r}") from None

    def __str__(self):
        return self.value


ALL_VARIANTS = (DecoderVariant.OPT, DecoderVariant.CSI, DecoderVariant.CSF, DecoderVariant.LIN)


@dataclass(frozen=True)
class GmiEstimate:
    nats: float
    std_err: float
    n_samples: int
    variant: Optional[DecoderVariant]
    clamped: int = 0

    @property
    def bits(self) -> float:
        return self.nats / math.log(2.0)


def combined_std_err(*estimates: GmiEstimate) -> float:
    return math.sqrt(sum(e.std_err**2 for e in estimates))


@dataclass
class GmiReport:
    """Estimates of several variants from one set of common random draws.

    ``terms`` holds the per-outer-draw contributions (``opt``, ``csi``,
    ``lin``) and the per-outer conditional MMSE (``mmse_v``), so paired
    differences can be formed.
    """

    estimates: Dict[DecoderVariant, GmiEstimate]
    terms: Dict[str, np.ndarray]
    n_outer: int
    n_inner: int
    exact_inner: bool
    clamped: int = 0
    n_values: int = 0

    def __getitem__(self, key) -> GmiEstimate:
        return self.estimates[DecoderVariant.parse(key)]

    def __contains__(self, key) -> bool:
        return DecoderVariant.parse(key) in self.estimates

    @property
    def clamped_fraction(self) -> float:
        return self.clamped / self.n_values if self.n_values else 0.0

    def paired_difference(self, a, b):
        """``(gmi_a - gmi_b, std_err)`` using the pairing of common draws (``csf`` excluded)."""
        a, b = DecoderVariant.parse(a).value, DecoderVariant.parse(b).value
        if "csf" in (a, b):
            raise InvalidArgumentError("csf is not a per-draw average; use combined_std_err")
        d = self.terms[a] - self.terms[b]
        se = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
        return float(d.mean()), se


def _mean_se(terms: np.ndarray):
    terms = np.asarray(terms, dtype=float)
    if terms.size > 1:
        return float(terms.mean()), float(np.std(terms, ddof=1) / math.sqrt(terms.size))
    return float(terms.mean()), 0.0


def _clamp(omega):
    mask = omega < OMEGA_FLOOR
    return np.where(mask, OMEGA_FLOOR, omega), mask


def _variants(variants) -> tuple:
    if variants is None:
        return ALL_VARIANTS
    out = tuple(DecoderVariant.parse(v) for v in variants)
    if not out:
        raise InvalidArgumentError("at least one variant is required")
    return out


def evaluate_gmis(spec: ChannelSpec, inp: GaussianInputSpec, n_outer: int = 10_000,
                  n_inner: int = DEFAULT_N_INNER, rng=None, variants: Optional[Iterable] = None,
                  engine: Optional[PosteriorEngine] = None,
                  quadrature_order: int = DEFAULT_QUADRATURE_ORDER) -> GmiReport:
    """Estimate several GMIs from the same draws.

    The CSI ``v`` is drawn ``n_outer`` times (once, trivially, for
    channels without CSI).  For each ``v`` the law of ``y | v`` is either
    enumerated exactly (Gaussian and one-bit channels with known state) or
    sampled ``n_inner`` times.  Because ``opt``, ``csi`` and ``csf`` are
    formed from the same ``omega`` values, ``opt >= csi >= csf`` holds
    exactly on every run (Jensen).  ``lin`` uses closed-form linear
    statistics for each ``v``.
    """
    variants = _variants(variants)
    engine = engine or make_engine(spec, inp, quadrature_order)
    gen = as_generator(rng)
    P = inp.power
    if spec.variant == ch.LINEAR:
        V, K = None, 1
    else:
        if n_outer < 2:
            raise InvalidArgumentError("n_outer must be at least 2 on channels with CSI")
        V = engine.sample_v(int(n_outer), gen)
        K = int(n_outer)

    terms: Dict[str, np.ndarray] = {}
    clamped = n_values = 0
    need_omega = any(v is not DecoderVariant.LIN for v in variants)
    if need_omega:
        if engine.exact_inner:
            w, omega, _ = engine.inner_exact(V)
            omega, mask = _clamp(omega)
            clamped, n_values = int(mask.sum()), int(mask.size)
            opt_terms = np.sum(w * np.log(P / omega), axis=1)
            mmse_v = np.sum(w * omega, axis=1) / np.sum(w, axis=1)
            n_inner_used = 0
        else:
            if n_inner < 1:
                raise InvalidArgumentError("n_inner must be positive")
            _, Y = engine.sample_given_v(V, int(n_inner), gen)
            _, _, omega = engine.moments_given_v(V, Y)
            omega, mask = _clamp(omega)
            clamped, n_values = int(mask.sum()), int(mask.size)
            opt_terms = np.mean(np.log(P / omega), axis=1)
            mmse_v = np.mean(omega, axis=1)
            n_inner_used = int(n_inner)
        terms["opt"] = opt_terms
        terms["csi"] = np.log(P / mmse_v)
        terms["mmse_v"] = mmse_v
    else:
        n_inner_used = 0
    if DecoderVariant.LIN in variants:
        _, _, lm = engine.lmmse(V)
        lm = np.maximum(np.asarray(lm, dtype=float), OMEGA_FLOOR)
        terms["lin"] = np.log(P / lm)

    n_samples = K * max(1, n_inner_used)
    out: Dict[DecoderVariant, GmiEstimate] = {}
    for var in variants:
        if var is DecoderVariant.CSF:
            mmse, se_m = _mean_se(terms["mmse_v"])
            out[var] = GmiEstimate(float(math.log(P / mmse)), se_m / mmse, n_samples, var, clamped)
        else:
            val, se = _mean_se(terms[var.value])
            ns = K if var is DecoderVariant.LIN else n_samples
            out[var] = GmiEstimate(val, se, ns, var, clamped if var is not DecoderVariant.LIN else 0)
    return GmiReport(out, terms, K, n_inner_used, engine.exact_inner, clamped, n_values)


def _joint_omega(spec, inp, n, rng, engine):
    engine = engine or make_engine(spec, inp)
    uses = engine.sample(int(n), as_generator(rng))
    _, _, omega = engine.moments(uses.y, uses.v)
    return _clamp(omega)


def gmi_opt(spec: ChannelSpec, inp: GaussianInputSpec, n: int = 10_000, rng=None,
            engine: Optional[PosteriorEngine] = None) -> GmiEstimate:
    """``E[log P / omega(y, v)]``.

    Where the law of ``y | v`` can be enumerated the inner expectation is
    exact and ``n`` counts draws of ``v``; otherwise ``n`` joint draws of
    ``(x, s, v, y)`` are averaged.
    """
    engine = engine or make_engine(spec, inp)
    if engine.exact_inner:
        return evaluate_gmis(spec, inp, n, 0, rng, [DecoderVariant.OPT], engine)[DecoderVariant.OPT]
    omega, mask = _joint_omega(spec, inp, n, rng, engine)
    val, se = _mean_se(np.log(inp.power / omega))
    return GmiEstimate(val, se, int(n), DecoderVariant.OPT, int(mask.sum()))


def gmi_csf(spec: ChannelSpec, inp: GaussianInputSpec, n: int = 10_000, rng=None,
            engine: Optional[PosteriorEngine] = None) -> GmiEstimate:
    """``log P / E[omega]``; standard error by the delta method."""
    engine = engine or make_engine(spec, inp)
    if engine.exact_inner:
        return evaluate_gmis(spec, inp, n, 0, rng, [DecoderVariant.CSF], engine)[DecoderVariant.CSF]
    omega, mask = _joint_omega(spec, inp, n, rng, engine)
    mmse, se = _mean_se(omega)
    return GmiEstimate(float(math.log(inp.power / mmse)), se / mmse, int(n), DecoderVariant.CSF, int(mask.sum()))


def gmi_csi(spec: ChannelSpec, inp: GaussianInputSpec, n_outer: int = 2000, n_inner: int = DEFAULT_N_INNER,
            rng=None, engine: Optional[PosteriorEngine] = None) -> GmiEstimate:
    """``E[log P / E[omega | v]]`` by outer draws of ``v`` and inner conditional MMSE."""
    return evaluate_gmis(spec, inp, n_outer, n_inner, rng, [DecoderVariant.CSI], engine)[DecoderVariant.CSI]


def gmi_lin(spec: ChannelSpec, inp: GaussianInputSpec, n_outer: int = 2000, n_inner: int = 0,
            rng=None, engine: Optional[PosteriorEngine] = None, method: str = "auto") -> GmiEstimate:
    """``E[log P / lmmse_v]``.

    ``method="auto"`` uses closed-form linear statistics for each ``v``;
    ``method="mc"`` estimates them from ``n_inner`` draws of ``(x, y) | v``.
    """
    if method == "auto":
        return evaluate_gmis(spec, inp, n_outer, 0, rng, [DecoderVariant.LIN], engine)[DecoderVariant.LIN]
    if method != "mc":
        raise InvalidArgumentError(f"unknown method {method!r}")
    engine = engine or make_engine(spec, inp)
    gen = as_generator(rng)
    if spec.variant == ch.LINEAR:
        vs = [None]
    else:
        vs = list(engine.sample_v(int(n_outer), gen))
    lm = np.array([lmmse_stats(spec, inp, v, n_inner, gen, method="mc", engine=engine).lmmse for v in vs])
    val, se = _mean_se(np.log(inp.power / np.maximum(lm, OMEGA_FLOOR)))
    return GmiEstimate(val, se, len(vs) * int(n_inner), DecoderVariant.LIN)


# --------------------------------------------------------------------------
# Decoder functions


@dataclass
class GnndrFunctions:
    """Processing function ``g`` and scaling function ``f`` of a decoder.

    Both are vectorized: ``g(Y, V)`` and ``f(Y, V)`` take ``Y`` of shape
    ``(n, p)`` and ``V`` of shape ``(n, p)`` (or ``None`` without CSI) and
    return complex arrays of shape ``(n,)``.
    """

    pair: Callable
    variant: Optional[DecoderVariant] = None
    aux: dict = field(default_factory=dict)

    def g(self, Y, V=None):
        return self.pair(Y, V)[0]

    def f(self, Y, V=None):
        return self.pair(Y, V)[1]

    @classmethod
    def custom(cls, g: Callable, f: Callable, **aux) -> "GnndrFunctions":
        """Wrap user callables ``g(Y, V)`` and ``f(Y, V)``."""
        def pair(Y, V):
            Y = np.atleast_2d(Y)
            n = Y.shape[0]
            return (np.broadcast_to(np.asarray(g(Y, V), dtype=complex), (n,)),
                    np.broadcast_to(np.asarray(f(Y, V), dtype=complex), (n,)))
        return cls(pair, None, dict(aux))


def _csi_mmse(engine, V, n_inner, gen):
    """Conditional MMSE for each row of ``V``."""
    if engine.exact_inner:
        w, omega, _ = engine.inner_exact(V)
        return np.sum(w * np.maximum(omega, OMEGA_FLOOR), axis=1) / np.sum(w, axis=1)
    _, Y = engine.sample_given_v(V, int(n_inner), gen)
    _, _, omega = engine.moments_given_v(V, Y)
    return np.mean(np.maximum(omega, OMEGA_FLOOR), axis=1)


def gnndr_functions(variant, spec: ChannelSpec, inp: GaussianInputSpec,
                    engine: Optional[PosteriorEngine] = None, n: int = 20_000, n_inner: int = DEFAULT_N_INNER,
                    rng=None, mmse: Optional[float] = None) -> GnndrFunctions:
    """The GMI-maximizing ``(g, f)`` pair of ``variant`` for ``spec``.

    ``opt``
        ``g = E[x|y,v] / sqrt((P - w) w)``, ``f = sqrt(P - w) / (P sqrt(w))``
        with ``w = omega(y, v)``.
    ``csf``
        ``g = E[x|y,v]``, ``f = alpha = (P - mmse) / P``.  ``mmse`` is
        taken from the argument, computed exactly, or estimated from ``n``
        draws.
    ``csi``
        ``g = sqrt(Q) E[x|y,v]``, ``f = sqrt(Q) (P - mmse_v) / P`` with
        ``Q = 1 / ((P - mmse_v) mmse_v)``; ``mmse_v`` is exact or estimated
        from ``n_inner`` draws per ``v``.
    ``lin``
        ``g = sqrt(Q) beta^H y`` with ``beta = E[yy^H|v]^-1 E[x* y|v]``,
        ``f = sqrt(Q) (P - lmmse_v) / P`` and ``Q = 1 / ((P - lmmse_v) lmmse_v)``.

    Raises ``NotImplementedError`` for channels without a posterior engine.
    """
    variant = DecoderVariant.parse(variant)
    engine = engine or make_engine(spec, inp)
    P = inp.power
    gen = as_generator(rng)
    eps = OMEGA_FLOOR

    def _v(V, n):
        return None if spec.variant == ch.LINEAR else np.atleast_2d(V)

    if variant is DecoderVariant.OPT:
        def pair(Y, V):
            Y = np.atleast_2d(Y)
            mean, _, omega = engine.moments(Y, _v(V, Y.shape[0]))
            omega = np.clip(omega, eps, None)
            gap = np.clip(P - omega, eps, None)
            return mean / np.sqrt(gap * omega), (np.sqrt(gap) / (P * np.sqrt(omega))).astype(complex)
        return GnndrFunctions(pair, variant, {})

    if variant is DecoderVariant.CSF:
        if mmse is None:
            if spec.variant == ch.LINEAR or engine.exact_inner:
                rep = evaluate_gmis(spec, inp, n, 0, gen, [DecoderVariant.CSF], engine)
                mmse = float(np.mean(rep.terms["mmse_v"]))
            else:
                omega, _ = _joint_omega(spec, inp, n, gen, engine)
                mmse = float(omega.mean())
        alpha = (P - mmse) / P

        def pair(Y, V):
            Y = np.atleast_2d(Y)
            mean, _, _ = engine.moments(Y, _v(V, Y.shape[0]))
            return mean, np.full(mean.shape, alpha, dtype=complex)
        return GnndrFunctions(pair, variant, {"alpha": alpha, "mmse": mmse})

    if variant is DecoderVariant.CSI:
        fixed = None
        if spec.variant == ch.LINEAR:
            fixed = float(_csi_mmse(engine, None, n_inner, gen)[0])

        def scale(V):
            mv = np.array([fixed]) if fixed is not None else _csi_mmse(engine, V, n_inner, gen)
            gap = np.clip(P - mv, eps, None)
            q = 1.0 / (gap * mv)
            return np.sqrt(q), gap / P, mv

        def pair(Y, V):
            Y = np.atleast_2d(Y)
            Vv = _v(V, Y.shape[0])
            mean, _, _ = engine.moments(Y, Vv)
            sq, ft, _ = scale(Vv)
            return sq * mean, (sq * ft).astype(complex) * np.ones(mean.shape)
        aux = {"Q": (lambda V: scale(_v(V, 1))[0] ** 2), "f_tilde": (lambda V: scale(_v(V, 1))[1])}
        if fixed is not None:
            aux["mmse_v"] = fixed
        return GnndrFunctions(pair, variant, aux)

    if variant is DecoderVariant.LIN:
        def stats(V):
            cross, gram, lm = engine.lmmse(V)
            beta = np.linalg.solve(gram, cross[..., None])[..., 0]
            lm = np.clip(np.asarray(lm, dtype=float), eps, P)
            gap = np.clip(P - lm, eps, None)
            q = 1.0 / (gap * lm)
            return beta, q, gap / P

        def pair(Y, V):
            Y = np.atleast_2d(Y)
            beta, q, ft = stats(_v(V, Y.shape[0]))
            sq = np.sqrt(q)
            g = sq * np.sum(beta.conj() * Y, axis=-1)
            return g, (sq * ft).astype(complex) * np.ones(g.shape)
        aux = {"beta_tilde": (lambda V: stats(_v(V, 1))[0]),
               "Q": (lambda V: stats(_v(V, 1))[1]),
               "f_tilde": (lambda V: stats(_v(V, 1))[2])}
        return GnndrFunctions(pair, variant, aux)
    raise NotImplementedError(variant)  # pragma: no cover


# --------------------------------------------------------------------------
# Fixed (g, f)


@dataclass(frozen=True)
class FixedGfResult:
    estimate: GmiEstimate
    theta: float


def _theta_objective(theta, d2, g2, a):
    """Per-sample terms of the GMI objective at ``theta < 0``."""
    den = 1.0 - theta * a
    return theta * d2 - theta * g2 / den + np.log(den)


def maximize_theta(d2, g2, a, rtol: float = 1e-10):
    """Maximize ``mean(theta d2 - theta g2/(1 - theta a) + log(1 - theta a))`` over ``theta < 0``.

    The objective is concave in ``theta``, hence unimodal in
    ``u = log(-theta)``; the search brackets on a log grid over
    ``-theta in [1e-9, 1e6 / mean(a)]`` and refines by golden section.
    Returns ``(value, theta)``; ``(0.0, 0.0)`` when the supremum is
    approached as ``theta -> 0`` (no information).

    Raises
    ------
    InvalidFunctionError
        If the statistics are non-finite or the maximum sits at the far end
        of the bracket.
    """
    d2, g2, a = (np.asarray(t, dtype=float) for t in (d2, g2, a))
    for t in (d2, g2, a):
        if not np.all(np.isfinite(t)):
            raise InvalidFunctionError("non-finite decoder statistics")
    p_eff = float(a.mean())
    if p_eff <= 0.0:
        return 0.0, 0.0

    def F(u):
        return float(np.mean(_theta_objective(-math.exp(u), d2, g2, a)))

    lo, hi = math.log(THETA_MIN), math.log(THETA_MAX / p_eff)
    grid = np.linspace(lo, hi, 97)
    vals = np.array([F(u) for u in grid])
    if not np.all(np.isfinite(vals)):
        raise InvalidFunctionError("objective is not finite on the search bracket")
    i = int(np.argmax(vals))
    if i == grid.size - 1:
        raise InvalidFunctionError("GMI objective keeps increasing at the far end of the theta bracket")
    if i == 0:
        return 0.0, 0.0
    # golden section on [grid[i-1], grid[i+1]]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x0, x3 = grid[i - 1], grid[i + 1]
    x1 = x3 - invphi * (x3 - x0)
    x2 = x0 + invphi * (x3 - x0)
    f1, f2 = F(x1), F(x2)
    while x3 - x0 > rtol * max(1.0, abs(x1)):
        if f1 >= f2:
            x3, x2, f2 = x2, x1, f1
            x1 = x3 - invphi * (x3 - x0)
            f1 = F(x1)
        else:
            x0, x1, f1 = x1, x2, f2
            x2 = x0 + invphi * (x3 - x0)
            f2 = F(x2)
    u = x1 if f1 >= f2 else x2
    val = max(f1, f2, vals[i])
    if val == vals[i]:
        u = grid[i]
    if val <= 0.0:
        return 0.0, 0.0
    return val, -math.exp(u)


def gmi_fixed_gf(spec: ChannelSpec, inp: GaussianInputSpec, fns: GnndrFunctions, n: int = 10_000,
                 rng=None, return_theta: bool = False):
    """GMI of the decoder with a given ``(g, f)``, by Monte Carlo and a search over ``theta``.

    Estimates ``E|g - f x|^2``, ``E[|g|^2 / (1 - theta |f|^2 P)]`` and
    ``E[log(1 - theta |f|^2 P)]`` from ``n`` joint draws and maximizes
    over ``theta < 0``.  The standard error is that of the per-sample
    objective at the maximizer.
    """
    gen = as_generator(rng)
    P = inp.power
    uses = ch.sample_uses(spec, inp, int(n), gen)
    g, f = fns.pair(uses.y, uses.v)
    g = np.asarray(g, dtype=complex)
    f = np.asarray(f, dtype=complex)
    d2 = np.abs(g - f * uses.x) ** 2
    g2 = np.abs(g) ** 2
    a = np.abs(f) ** 2 * P
    val, theta = maximize_theta(d2, g2, a)
    if theta == 0.0:
        est = GmiEstimate(0.0, 0.0, int(n), fns.variant)
    else:
        t = _theta_objective(theta, d2, g2, a)
        est = GmiEstimate(val, float(np.std(t, ddof=1) / math.sqrt(t.size)), int(n), fns.variant)
    if return_theta:
        return FixedGfResult(est, theta)
    return est


# --------------------------------------------------------------------------
# Bussgang decomposition


def bussgang_snr(spec: ChannelSpec, inp: GaussianInputSpec, v=None, n: int = 0, rng=None,
                 method: str = "auto", engine: Optional[PosteriorEngine] = None) -> float:
    """``snr(v) = c^H G^-1 c / (P - c^H G^-1 c)`` with ``c = E[x* y|v]``, ``G = E[yy^H|v]``.

    Evaluated through the LMMSE as ``(P - lmmse_v) / lmmse_v``, so that
    ``E[log(1 + snr(v))]`` equals the ``lin`` GMI.
    """
    st = lmmse_stats(spec, inp, v, n, rng, method, engine)
    lm = max(st.lmmse, OMEGA_FLOOR)
    return max(inp.power - lm, 0.0) / lm


def bussgang_snr_batch(engine: PosteriorEngine, V) -> np.ndarray:
    """Vectorized :func:`bussgang_snr` for rows of ``V`` (closed forms)."""
    _, _, lm = engine.lmmse(V)
    lm = np.maximum(np.asarray(lm, dtype=float), OMEGA_FLOOR)
    return np.maximum(engine.P - lm, 0.0) / lm


@dataclass(frozen=True)
class ResidualCheck:
    """Largest entry of ``E[(c/P) x w^H | v]`` and the standard error of that entry."""

    value: float
    std_err: float
    n_samples: int


def bussgang_residual_check(spec: ChannelSpec, inp: GaussianInputSpec, v=None, n: int = 100_000, rng=None,
                            engine: Optional[PosteriorEngine] = None) -> ResidualCheck:
    """Monte Carlo check that the Bussgang noise ``w = y - c x / P`` is uncorrelated with ``c x / P``."""
    engine = engine or make_engine(spec, inp)
    P = inp.power
    V = None if spec.variant == ch.LINEAR else np.asarray(v, dtype=complex).reshape(1, spec.antennas)
    cross, _, _ = engine.lmmse(V)
    c = cross[0]
    X, Y = engine.sample_given_v(V, int(n), as_generator(rng))
    x, y = X[0], Y[0]
    sig = (c[None, :] / P) * x[:, None]
    w = y - sig
    prod = sig[:, :, None] * w[:, None, :].conj()
    m = prod.mean(axis=0)
    sd = np.sqrt(np.var(prod.real, axis=0, ddof=1) + np.var(prod.imag, axis=0, ddof=1)) / math.sqrt(n)
    k = np.unravel_index(np.argmax(np.abs(m)), m.shape)
    return ResidualCheck(float(np.abs(m[k])), float(sd[k]), int(n))
