"""Random-codebook link simulation with GNNDR decoding.

Each trial draws a fresh codebook with i.i.d. ``CN(0, P)`` entries, sends
one message over ``N`` channel uses and decodes with the metric
``sum_n |g(y_n, v_n) - f(y_n, v_n) x_n(m)|^2``.  Message indices are
0-based; ties go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import stats
from scipy.special import erfcx

from . import channels as ch
from .channels import ChannelSpec, ChannelUses, GaussianInputSpec
from .errors import CapacityExceededError, InvalidArgumentError
from .gmi import DecoderVariant, GnndrFunctions, gnndr_functions
from .mathkernel import Rng, sample_cn

MAX_MESSAGES = 2**14
MAX_BLOCK_LENGTH = 1024
MAX_WORK = 2**34  # M * N * trials
_CHUNK = 1 << 21


@dataclass(frozen=True)
class CodebookSpec:
    """Block length ``N``, target rate ``R`` (nats/use) and message count ``M``.

    Without an explicit ``message_count``, ``M = ceil(exp(N R))``.  With
    one, ``M`` is fixed and ``N`` is re-derived as ``round(ln M / R)`` so the
    realized rate ``ln M / N`` tracks ``R`` (``adjust_block_length=False``
    keeps ``N`` instead).
    """

    block_length: int
    rate: float
    message_count: Optional[int] = None
    seed: int = 0
    adjust_block_length: bool = True
    requested_block_length: int = field(init=False, default=0)

    def __post_init__(self):
        if isinstance(self.block_length, bool) or int(self.block_length) != self.block_length or self.block_length < 1:
            raise InvalidArgumentError("block_length must be a positive integer")
        if not (self.rate >= 0 and math.isfinite(self.rate)):
            raise InvalidArgumentError("rate must be a nonnegative finite real")
        object.__setattr__(self, "requested_block_length", int(self.block_length))
        if self.message_count is None:
            nr = self.block_length * self.rate
            if nr > math.log(MAX_MESSAGES):
                raise CapacityExceededError(
                    f"exp(N R) = exp({nr:.3g}) exceeds the {MAX_MESSAGES}-message budget; pass message_count")
            M = max(2, math.ceil(math.exp(nr) - 1e-9))
            object.__setattr__(self, "message_count", int(M))
        else:
            M = int(self.message_count)
            if M != self.message_count or M < 2:
                raise InvalidArgumentError("message_count must be an integer >= 2")
            object.__setattr__(self, "message_count", M)
            if self.adjust_block_length and self.rate > 0:
                object.__setattr__(self, "block_length", max(1, int(round(math.log(M) / self.rate))))
        if self.message_count > MAX_MESSAGES:
            raise CapacityExceededError(f"message_count {self.message_count} exceeds {MAX_MESSAGES}")
        if self.block_length > MAX_BLOCK_LENGTH:
            raise CapacityExceededError(f"block_length {self.block_length} exceeds {MAX_BLOCK_LENGTH}")

    @property
    def realized_rate(self) -> float:
        return math.log(self.message_count) / self.block_length

    def draw(self, inp: GaussianInputSpec, rng) -> np.ndarray:
        """A codebook of shape ``(M, N)`` with i.i.d. ``CN(0, P)`` entries."""
        return sample_cn(rng, 0j, inp.power, size=(self.message_count, self.block_length))


@dataclass(frozen=True)
class TrialResult:
    sent: int
    decoded: int
    metric_margin: float

    @property
    def error(self) -> bool:
        return self.sent != self.decoded


@dataclass
class BlerResult:
    errors: int
    trials: int
    ci_low: float
    ci_high: float
    codebook: CodebookSpec
    variant: Optional[DecoderVariant]
    results: List[TrialResult] = field(default_factory=list)

    @property
    def bler(self) -> float:
        return self.errors / self.trials


def _yv(uses):
    if isinstance(uses, ChannelUses):
        return uses.y, uses.v
    y, v = uses
    return np.atleast_2d(np.asarray(y)), None if v is None else np.atleast_2d(np.asarray(v))


def symbol_weights(fns: GnndrFunctions, uses):
    """``(g_n, f_n)`` for every channel use."""
    Y, V = _yv(uses)
    g, f = fns.pair(Y, V)
    return np.asarray(g, dtype=complex), np.asarray(f, dtype=complex)


def gnndr_metric(fns: GnndrFunctions, uses, codeword) -> float:
    """``sum_n |g(y_n, v_n) - f(y_n, v_n) x_n|^2``."""
    g, f = symbol_weights(fns, uses)
    x = np.asarray(codeword, dtype=complex).ravel()
    if x.shape != g.shape:
        raise InvalidArgumentError(f"codeword length {x.size} does not match {g.size} channel uses")
    return float(np.sum(np.abs(g - f * x) ** 2))


def metrics_all(g, f, codebook) -> np.ndarray:
    """Metric of every codeword given per-symbol ``g`` and ``f``."""
    codebook = np.atleast_2d(codebook)
    if codebook.shape[1] != g.size:
        raise InvalidArgumentError("codebook block length does not match the number of channel uses")
    M = codebook.shape[0]
    out = np.empty(M)
    step = max(1, _CHUNK // g.size)
    for lo in range(0, M, step):
        diff = g[None, :] - f[None, :] * codebook[lo:lo + step]
        out[lo:lo + step] = np.sum(diff.real**2 + diff.imag**2, axis=1)
    return out


def _decide(metrics):
    order = np.argsort(metrics, kind="stable")
    win = int(order[0])
    margin = float(metrics[order[1]] - metrics[win]) if metrics.size > 1 else math.inf
    return win, margin


def decode(fns: GnndrFunctions, uses, codebook, return_margin: bool = False):
    """Index of the codeword with the smallest metric (lowest index on ties)."""
    codebook = np.atleast_2d(np.asarray(codebook, dtype=complex))
    if codebook.shape[0] < 1:
        raise InvalidArgumentError("codebook is empty")
    g, f = symbol_weights(fns, uses)
    win, margin = _decide(metrics_all(g, f, codebook))
    return (win, margin) if return_margin else win


# --------------------------------------------------------------------------
# Pilot-channel linear decoder written directly in terms of the pilot


def pilot_lin_weights_pilot_form(spec: ChannelSpec, Y, YP):
    """Per-symbol ``(g, f)`` of the linear pilot decoder in received-pilot form.

    ``g = y_p^H y / |y_p|``, ``f = eta2 conj(x_p) |y_p| / (eta2 |x_p|^2 + sigma2)``.
    """
    Y, YP = np.atleast_2d(Y), np.atleast_2d(YP)
    xp, eta2, s2 = spec.pilot, spec.fading_power, spec.noise_power
    norm = np.linalg.norm(YP, axis=1)
    g = np.sum(YP.conj() * Y, axis=1) / norm
    f = eta2 * xp.conjugate() * norm / (eta2 * abs(xp) ** 2 + s2)
    return g, f


def pilot_lin_weights_estimate_form(spec: ChannelSpec, Y, YP):
    """Per-symbol ``(g, f)`` in channel-estimate form: ``g = s_hat^H y / |s_hat|``, ``f = |s_hat|``."""
    Y, YP = np.atleast_2d(Y), np.atleast_2d(YP)
    gain, _ = spec.pilot_posterior()
    shat = gain * YP
    norm = np.linalg.norm(shat, axis=1)
    return np.sum(shat.conj() * Y, axis=1) / norm, norm.astype(complex)


def pilot_lin_functions(spec: ChannelSpec, form: str = "pilot") -> GnndrFunctions:
    """The linear pilot decoder as a :class:`GnndrFunctions` (``form`` is ``"pilot"`` or ``"estimate"``)."""
    if spec.variant != ch.PILOT:
        raise InvalidArgumentError("pilot decoder forms need a FadingPilotCsi channel")
    fn = {"pilot": pilot_lin_weights_pilot_form, "estimate": pilot_lin_weights_estimate_form}.get(form)
    if fn is None:
        raise InvalidArgumentError(f"unknown form {form!r}")
    return GnndrFunctions(lambda Y, V: fn(spec, Y, V), DecoderVariant.LIN, {"form": form})


# --------------------------------------------------------------------------
# Link simulation


def wilson_interval(errors: int, trials: int, level: float = 0.95):
    ci = stats.binomtest(int(errors), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _base_rng(rng) -> Rng:
    if isinstance(rng, Rng):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return Rng(0 if rng is None else int(rng))
    raise InvalidArgumentError("per-trial streams need an Rng or an integer seed")


def simulate_bler(spec: ChannelSpec, inp: GaussianInputSpec, variant, cb: CodebookSpec, trials: int,
                  rng=None, fns: Optional[GnndrFunctions] = None, keep_results: bool = True,
                  max_work: int = MAX_WORK, **fn_kwargs) -> BlerResult:
    """Block error rate of a GNNDR variant over fresh random codebooks.

    Trial ``t`` uses the child stream ``t`` of ``rng`` for its codebook,
    message and channel, so results do not depend on execution order.
    ``fns`` overrides the decoder functions built by
    :func:`gnndr.gmi.gnndr_functions` (extra keyword arguments are passed
    there).
    """
    if isinstance(trials, bool) or int(trials) != trials or trials < 1:
        raise InvalidArgumentError("trials must be a positive integer")
    work = cb.message_count * cb.block_length * int(trials)
    if work > max_work:
        raise CapacityExceededError(f"M*N*trials = {work} exceeds the budget {max_work}")
    variant = None if variant is None else DecoderVariant.parse(variant)
    if fns is None:
        if variant is None:
            raise InvalidArgumentError("either a variant or decoder functions are required")
        fns = gnndr_functions(variant, spec, inp, rng=Rng(cb.seed, 2**63), **fn_kwargs)
    base = _base_rng(Rng(cb.seed) if rng is None else rng)
    results = []
    errors = 0
    for t in range(int(trials)):
        gen = base.child(t).generator()
        book = cb.draw(inp, gen)
        sent = int(gen.integers(cb.message_count))
        uses = ch.sample_uses(spec, inp, cb.block_length, gen, x=book[sent])
        win, margin = decode(fns, uses, book, return_margin=True)
        errors += win != sent
        if keep_results:
            results.append(TrialResult(sent, win, margin))
    lo, hi = wilson_interval(errors, trials)
    return BlerResult(errors, int(trials), lo, hi, cb, variant, results)


# --------------------------------------------------------------------------
# Ensemble error probability with the competing codewords integrated out


def _cgf(t, a, b):
    """Cumulant generating function of ``sum |g_n - f_n X_n|^2`` with ``X_n ~ CN(0, P)``.

    ``a = |f|^2 P``, ``b = |g|^2``; valid for ``t < 1 / max(a)``.
    """
    d = 1.0 - t * a
    return float(np.sum(t * b / d - np.log(d)))


def _cgf_derivs(t, a, b):
    d = 1.0 - t * a
    k1 = np.sum(a / d + b / d**2)
    k2 = np.sum(a**2 / d**2 + 2.0 * a * b / d**3)
    return float(k1), float(k2)


def pairwise_log_tail(g, f, P: float, d: float) -> float:
    """``log P(sum_n |g_n - f_n X_n|^2 <= d)`` for an independent codeword ``X ~ CN(0, P I)``.

    Lugannani-Rice saddlepoint approximation (relative error ``O(1/N)``).
    """
    a = np.abs(f) ** 2 * P
    b = np.abs(g) ** 2
    keep = a > 0
    const = float(np.sum(b[~keep]))
    a, b = a[keep], b[keep]
    d = d - const
    if d <= 0:
        return -math.inf
    if a.size == 0:
        return 0.0
    amax = float(a.max())
    mean = float(np.sum(a + b))
    # K'(t) = d on t < 1/amax; K' increases from 0 (t -> -inf) to +inf (t -> 1/amax)
    if d < mean:
        lo, hi = -1.0 / amax, 0.0
        while _cgf_derivs(lo, a, b)[0] > d:
            lo *= 2.0
    else:
        lo, hi = 0.0, 0.5 / amax
        while _cgf_derivs(hi, a, b)[0] < d:
            hi = 0.5 * (hi + 1.0 / amax)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _cgf_derivs(mid, a, b)[0] < d:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, abs(mid)):
            break
    t = 0.5 * (lo + hi)
    _, k2 = _cgf_derivs(t, a, b)
    expo = t * d - _cgf(t, a, b)
    if abs(t) * math.sqrt(k2) < 1e-6:
        return float(stats.norm.logcdf((d - mean) / math.sqrt(k2)))
    w = math.copysign(math.sqrt(max(2.0 * expo, 0.0)), t)
    u = t * math.sqrt(k2)
    if w < 0:
        # log[Phi(w) + phi(w)(1/w - 1/u)] via the Mills ratio
        mills = math.sqrt(math.pi / 2.0) * erfcx(-w / math.sqrt(2.0))
        bracket = mills + 1.0 / w - 1.0 / u
        log_phi = -0.5 * w * w - 0.5 * math.log(2.0 * math.pi)
        if bracket <= 0:
            return float(stats.norm.logcdf(w))
        return log_phi + math.log(bracket)
    q = stats.norm.cdf(w) + stats.norm.pdf(w) * (1.0 / w - 1.0 / u)
    return math.log(min(max(q, 1e-300), 1.0))


@dataclass
class EnsembleBler:
    """Ensemble block error probability estimated with competitors integrated out."""

    bler: float
    std_err: float
    trials: int
    block_length: int
    log_competitors: float
    per_trial: np.ndarray


def ensemble_bler(spec: ChannelSpec, inp: GaussianInputSpec, variant, block_length: int, rate: float,
                  trials: int, rng=None, fns: Optional[GnndrFunctions] = None,
                  message_count: Optional[float] = None, **fn_kwargs) -> EnsembleBler:
    """Random-coding block error probability without enumerating the codebook.

    For each trial the transmitted codeword and channel are drawn; given
    them, the ``M - 1`` competing codewords are i.i.d., so the conditional
    error probability is ``1 - (1 - q)^(M - 1)`` with ``q`` the probability
    that one independent codeword scores at least as well.  ``q`` is a tail
    probability of a sum of scaled noncentral chi-square variables,
    evaluated by a saddlepoint approximation.  ``M = ceil(exp(N R))``
    unless ``message_count`` is given; it may be astronomically large.
    """
    variant = None if variant is None else DecoderVariant.parse(variant)
    if fns is None:
        fns = gnndr_functions(variant, spec, inp, rng=Rng(0, 2**63), **fn_kwargs)
    N = int(block_length)
    if message_count is None:
        if N * rate > 30:
            log_m1 = N * rate + math.log1p(-math.exp(-N * rate))
        else:
            log_m1 = math.log(max(math.ceil(math.exp(N * rate) - 1e-9), 2) - 1)
    else:
        log_m1 = math.log(float(message_count) - 1.0)
    base = _base_rng(rng)
    pe = np.empty(int(trials))
    for t in range(int(trials)):
        gen = base.child(t).generator()
        x = sample_cn(gen, 0j, inp.power, size=N)
        uses = ch.sample_uses(spec, inp, N, gen, x=x)
        g, f = symbol_weights(fns, uses)
        d_true = float(np.sum(np.abs(g - f * x) ** 2))
        lq = pairwise_log_tail(g, f, inp.power, d_true)
        # 1 - (1 - q)^(M - 1), with (M - 1) q possibly astronomically large
        if lq > -700.0:
            q = min(math.exp(lq), 1.0)
            log_nl = math.log(-math.log1p(-q)) if q < 1.0 else math.inf
        else:
            log_nl = lq
        pe[t] = -math.expm1(-math.exp(min(log_m1 + log_nl, 700.0)))
    se = float(np.std(pe, ddof=1) / math.sqrt(pe.size)) if pe.size > 1 else 0.0
    return EnsembleBler(float(pe.mean()), se, int(trials), N, log_m1, pe)
