"""Posterior moments of the channel input and (linear) MMSE statistics.

For an observation ``(y, v)`` the central quantities are ``E[x|y,v]``,
``E[|x|^2|y,v]`` and the conditional variance
``omega(y, v) = E[|x|^2|y,v] - |E[x|y,v]|^2``.

Three numerical routes are used, depending on the channel:

* unquantized channels with known state: Gaussian closed form;
* one-bit quantized channels: tensor Gauss-Hermite quadrature over the
  input, with exhaustive enumeration of output sign patterns when small;
* pilot-aided fading: the state posterior given the pilot is Gaussian, so
  conditioned on ``x`` the output is ``CN(s_hat x, (var_s |x|^2 + sigma2) I)``.
  The phase of ``x`` integrates in closed form (Bessel functions), leaving a
  one-dimensional radial Gauss-Legendre integral.  A self-normalized
  importance sampler over ``s`` is offered as an independent route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from . import channels as ch
from .channels import ChannelSpec, GaussianInputSpec
from .errors import (
    DegeneratePosteriorError,
    InvalidArgumentError,
    InvalidStateError,
    NumericalSingularityError,
    UnstableWeightsError,
)
from .mathkernel import (
    QuadratureRule,
    as_generator,
    gauss_hermite,
    rank1_inverse_apply,
    rank1_quadratic_form,
    sample_cn,
)

DEFAULT_QUADRATURE_ORDER = 48
DEFAULT_SNIS_SAMPLES = 2**14
OMEGA_FLOOR = 1e-12
MIN_EFFECTIVE_SAMPLES = 10.0
LOG_TINY = math.log(1e-300)
# largest (patterns x nodes) block evaluated at once
_BLOCK = 1 << 22
# Gauss-Legendre nodes per angular sub-panel and per radial panel
POLAR_NODES = (6, 6)
# (4, 4) leaves ~6e-7 error in E[|x|^2 | y, s]; (6, 6) brings it to ~2e-10
FADING_POLAR_NODES = (6, 6)
# radial panel edges in units of sqrt(P); graded toward 0 where the
# likelihood turns over on the scale sigma / |s| at high SNR
_POLAR_RADIAL_EDGES = (0.0, 0.01, 0.04, 0.15, 0.4, 0.8, 1.3, 2.0, 3.0, 4.5, 6.5)
# sub-panel breaks of each angular panel (as fractions, mirrored about 1/2),
# graded toward the sign boundaries at both ends
_POLAR_ANGULAR_BREAKS = (0.0, 0.002, 0.01, 0.05, 0.2, 0.5)
# line-arrangement rule: nodes per sub-panel, geometric growth of sub-panels
# away from a soft sign boundary, and the integration box half-width / sqrt(P)
LINE_NODES = 6
_LINE_GROWTH = 3.0
_LINE_EXTENT = 6.5
# nominal node count of the line rule, used only to size row chunks
_LINE_NOMINAL_SIZE = 200_000


@dataclass(frozen=True)
class PosteriorMoments:
    mean: complex
    second_moment: float
    omega: float


@dataclass(frozen=True)
class LmmseStats:
    """``cross = E[x* y|v]``, ``gram = E[y y^H|v]``, ``lmmse = P - cross^H gram^-1 cross``."""

    cross: np.ndarray
    gram: np.ndarray
    lmmse: float
    cross_std_err: Optional[np.ndarray] = None
    gram_std_err: Optional[np.ndarray] = None


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def _graded_legendre(n):
    """Composite Gauss-Legendre rule on [-1, 1] with sub-panels graded toward both ends."""
    fr = np.asarray(_POLAR_ANGULAR_BREAKS)
    br = 2.0 * np.concatenate([fr, 1.0 - fr[-2::-1]]) - 1.0
    t, w = _gauss_legendre(n)
    half = 0.5 * np.diff(br)
    mid = 0.5 * (br[1:] + br[:-1])
    return (half[:, None] * t + mid[:, None]).ravel(), (half[:, None] * w).ravel()


def _moments_from(mean, second):
    mean = np.asarray(mean)
    second = np.asarray(second, dtype=float)
    omega = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return mean, second, omega


def _single(mean, second, omega) -> PosteriorMoments:
    return PosteriorMoments(complex(np.ravel(mean)[0]), float(np.ravel(second)[0]), float(np.ravel(omega)[0]))


# --------------------------------------------------------------------------
# Gaussian closed form


def gaussian_moments(S, Y, sigma2: float, P: float):
    """Batched posterior moments for ``y = s x + z`` with ``x ~ CN(0, P)``.

    ``S`` and ``Y`` have shape ``(n, p)``; returns ``(mean, second, omega)``
    each of shape ``(n,)``.
    """
    S = np.atleast_2d(np.asarray(S, dtype=complex))
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    den = sigma2 + P * np.sum(np.abs(S) ** 2, axis=-1)
    mean = P * np.sum(S.conj() * Y, axis=-1) / den
    omega = np.broadcast_to(P * sigma2 / den, mean.shape).copy()
    return mean, omega + np.abs(mean) ** 2, omega


def moments_closed_form_gaussian(s, sigma2: float, P: float, y) -> PosteriorMoments:
    """Posterior of ``x`` given ``y = s x + z``: mean ``P s^H (P s s^H + sigma2 I)^-1 y``,
    variance ``P sigma2 / (sigma2 + P |s|^2)``."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    y = np.atleast_1d(np.asarray(y, dtype=complex))
    if s.shape != y.shape:
        raise InvalidArgumentError("s and y must have the same length")
    return _single(*gaussian_moments(s[None], y[None], sigma2, P))


# --------------------------------------------------------------------------
# One-bit quadrature


def _graded_breaks(lo, hi, e_lo, e_hi, hmax):
    """Panel breaks of ``[lo, hi]`` growing geometrically from each end.

    The first panel at an end has width ``e_lo`` (``e_hi``); ``None`` means
    that end has no boundary layer.  No panel is longer than ``hmax``.
    """
    pts = [lo, hi]
    for end, e, sgn in ((lo, e_lo, 1.0), (hi, e_hi, -1.0)):
        if e is None:
            continue
        o = e
        while o < 0.5 * (hi - lo):
            pts.append(end + sgn * o)
            o *= _LINE_GROWTH
    pts = np.unique(np.asarray(pts, dtype=float))
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(math.ceil((b - a) / hmax)))
        out.append(a + (b - a) * np.arange(1, m + 1) / m)
    return np.concatenate(out)


def _composite(br, n):
    t, w = _gauss_legendre(n)
    half = 0.5 * np.diff(br)
    mid = 0.5 * (br[1:] + br[:-1])
    return (half[:, None] * t + mid[:, None]).ravel(), (half[:, None] * w).ravel()


def line_arrangement_nodes(s, b, P: float, sigma2: float, n: int = LINE_NODES):
    """Quadrature for ``x ~ CN(0, P)`` adapted to the sign boundaries of a one-bit channel.

    Every likelihood factor switches across a line
    ``Re(s_i x) + Re(b_i) = 0`` or ``Im(s_i x) + Im(b_i) = 0`` over a width
    ``sigma / (sqrt(2) |s_i|)``.  In coordinates ``x = e^{j psi} (xi + j eta)``,
    with ``psi`` chosen so that no line is nearly parallel to the ``xi``
    axis, ``eta`` is cut into strips at the line intersections and, for
    each ``eta`` node, ``xi`` is cut at the line crossings.  Panels are
    graded toward every break on the scale of the boundary width.  Dither
    moves the lines off the origin, which is why the polar rule does not
    apply.

    Returns ``(u, w)``: complex nodes and weights including the prior density.
    """
    s = np.asarray(s, dtype=complex).ravel()
    b = np.broadcast_to(np.asarray(b, dtype=complex), s.shape)
    A = np.concatenate([s.real, s.imag])
    C = np.concatenate([-s.imag, s.real])
    D = np.concatenate([b.real, b.imag])
    k = math.sqrt(2.0 / sigma2)
    ang = np.sort(np.mod(np.arctan2(C, A) + 0.5 * np.pi, np.pi))
    gaps = np.diff(np.concatenate([ang, ang[:1] + np.pi]))
    j = int(np.argmax(gaps))
    psi = float(ang[j] + 0.5 * gaps[j])
    a = A * math.cos(psi) + C * math.sin(psi)
    c = -A * math.sin(psi) + C * math.cos(psi)
    L = _LINE_EXTENT * math.sqrt(P)
    hmax = 0.5 * math.sqrt(P)
    e_eta = 1.0 / (k * float(np.max(np.hypot(A, C))))
    ii, jj = np.triu_indices(A.size, 1)
    det = a[ii] * c[jj] - a[jj] * c[ii]
    ok = np.abs(det) > 1e-14
    eta_v = (a[jj] * D[ii] - a[ii] * D[jj])[ok] / det[ok]
    cuts = np.unique(np.concatenate([[-L, L], eta_v[(eta_v > -L) & (eta_v < L)]]))
    eta, w_eta = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        t, w = _composite(_graded_breaks(lo, hi, None if lo == -L else e_eta, None if hi == L else e_eta, hmax), n)
        eta.append(t)
        w_eta.append(w)
    eta = np.concatenate(eta)
    w_eta = np.concatenate(w_eta)
    width = 1.0 / (k * np.abs(a))
    xs, ws = [], []
    for e, we in zip(eta, w_eta):
        cr = -(c * e + D) / a
        keep = (cr > -L) & (cr < L)
        order = np.argsort(cr[keep])
        pts = np.concatenate([[-L], cr[keep][order], [L]])
        sc = np.concatenate([[np.nan], width[keep][order], [np.nan]])
        last = pts.size - 2
        for q in range(last + 1):
            if pts[q + 1] <= pts[q]:
                continue
            br = _graded_breaks(pts[q], pts[q + 1], None if q == 0 else sc[q], None if q == last else sc[q + 1], hmax)
            t, w = _composite(br, n)
            xs.append(t + 1j * e)
            ws.append(w * we)
    z = np.concatenate(xs)
    w = np.concatenate(ws) * np.exp(-np.abs(z) ** 2 / P) / (math.pi * P)
    return np.exp(1j * psi) * z, w


@lru_cache(maxsize=64)
def _line_nodes_cached(s: tuple, b: tuple, P: float, sigma2: float, n: int):
    u, w = line_arrangement_nodes(np.array(s), np.array(b), P, sigma2, n)
    with np.errstate(divide="ignore"):
        return u, np.log(w)


class OnebitQuadrature:
    """Quadrature over the input ``x ~ CN(0, P)`` for one-bit likelihoods.

    Two node sets are supported:

    * ``"hermite"``: tensor Gauss-Hermite, ``u = sqrt(P) (t1 + j t2)``, so
      the prior density becomes the Hermite weight;
    * ``"polar"``: Gauss-Legendre panels in angle and radius.  Without
      dither every sign boundary ``Re(s_i x) = 0`` / ``Im(s_i x) = 0`` is a
      line through the origin, i.e. a fixed angle.  Placing panel breaks
      there keeps the integrand smooth inside each panel; at high SNR it
      still has boundary layers at the breaks (and near ``r = 0``), so the
      panels are subdivided geometrically toward them.  This stays
      accurate where the tensor rule converges slowly.  Nodes depend on
      the state.
    * ``"lines"``: :func:`line_arrangement_nodes`, graded toward every
      sign boundary including dithered (offset) ones.  Nodes depend on the
      state and the dither; building them costs about a second at high
      SNR, so this rule suits fixed-state channels.
    """

    def __init__(self, P: float, sigma2: float, rule: QuadratureRule | int = DEFAULT_QUADRATURE_ORDER,
                 kind: str = "hermite", polar_nodes=POLAR_NODES, antennas: int = 1):
        if kind not in ("hermite", "polar", "lines"):
            raise InvalidArgumentError(f"unknown one-bit quadrature {kind!r}")
        self.kind = kind
        self.P = float(P)
        self.sigma2 = float(sigma2)
        self.antennas = int(antennas)
        if kind == "hermite":
            if isinstance(rule, (int, np.integer)):
                rule = gauss_hermite(int(rule))
            self.rule = rule
            t1, t2, w = rule.tensor2()
            self._u = (math.sqrt(P) * (t1 + 1j * t2))[None]
            self._logw = np.log(w / math.pi)[None]
        elif kind == "lines":
            self.rule = None
        else:
            self.rule = None
            n_ang, n_rad = polar_nodes
            self._t_ang, self._w_ang = _graded_legendre(n_ang)
            t, w = _gauss_legendre(n_rad)
            edges = np.asarray(_POLAR_RADIAL_EDGES)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            rho = (half[:, None] * t + mid[:, None]).ravel()
            wr = (half[:, None] * w).ravel() * rho * np.exp(-(rho**2)) / math.pi
            self._r = math.sqrt(P) * rho
            self._log_wr = np.log(wr)

    @property
    def size(self) -> int:
        if self.kind == "hermite":
            return self._u.shape[1]
        if self.kind == "lines":
            return _LINE_NOMINAL_SIZE
        return self._r.size * self._t_ang.size * 4 * self.antennas

    def nodes(self, S, b=None):
        """``(u, logw, symmetric)`` with ``u``, ``logw`` of shape ``(K', nodes)``.

        ``K' = 1`` for state-free rules.  When ``symmetric`` is set, the
        second half of the nodes is the negation of the first half.  Only
        the line rule uses the dither ``b``; its rows are padded with
        zero-weight nodes to a common length.
        """
        if self.kind == "hermite":
            return self._u, self._logw, False
        S = np.atleast_2d(S)
        if self.kind == "lines":
            bt = tuple(np.zeros(S.shape[1], dtype=complex) if b is None else np.asarray(b, dtype=complex).ravel())
            sets = [_line_nodes_cached(tuple(row), bt, self.P, self.sigma2, LINE_NODES) for row in S]
            m = max(u.size for u, _ in sets)
            u = np.zeros((len(sets), m), dtype=complex)
            logw = np.full((len(sets), m), -np.inf)
            for r, (uu, lw) in enumerate(sets):
                u[r, :uu.size] = uu
                logw[r, :uu.size] = lw
            return u, logw, False
        K, p = S.shape
        th = np.angle(S)
        # sign boundaries modulo pi; the other half circle mirrors them
        c = np.sort(np.mod(np.concatenate([0.5 * np.pi - th, -th], axis=1), np.pi), axis=1)
        br = np.concatenate([c, c[:, :1] + np.pi], axis=1)
        half = 0.5 * np.diff(br, axis=1)
        mid = 0.5 * (br[:, 1:] + br[:, :-1])
        phi = (half[..., None] * self._t_ang + mid[..., None]).reshape(K, -1)
        wphi = (half[..., None] * self._w_ang).reshape(K, -1)
        u = (self._r[None, :, None] * np.exp(1j * phi)[:, None, :]).reshape(K, -1)
        with np.errstate(divide="ignore"):
            logw = (self._log_wr[None, :, None] + np.log(wphi)[:, None, :]).reshape(K, -1)
        return np.concatenate([u, -u], axis=1), np.concatenate([logw, logw], axis=1), True

    @staticmethod
    def _reduce(loglik, u, logw):
        """Moments from log-likelihoods at the nodes.

        ``loglik`` has shape ``(K, m, nodes)`` or ``(K, nodes)``; ``u`` and
        ``logw`` have shape ``(K or 1, nodes)``.
        """
        flat = loglik.ndim == 2
        if flat:
            loglik = loglik[:, None, :]
        a = loglik + logw[:, None, :]
        top = np.max(a, axis=-1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.exp(a - top)
        basis = np.stack([u.real, u.imag, u.real**2 + u.imag**2, np.ones(u.shape)], axis=-1)
        sums = e @ basis
        den = sums[..., 3]
        mean = (sums[..., 0] + 1j * sums[..., 1]) / den
        second = sums[..., 2] / den
        logev = np.log(den) + top[..., 0]
        if flat:
            return logev[:, 0], mean[:, 0], second[:, 0]
        return logev, mean, second

    def _log_factors(self, S, u, b, symmetric):
        """``log P(y_i^R = +-1)``, ``log P(y_i^I = +-1)`` at every node, shape ``(K, p, nodes)``."""
        k = math.sqrt(2.0 / self.sigma2)
        if symmetric and not np.any(b):
            h = u.shape[1] // 2
            w = S[:, :, None] * u[:, None, :h]
            out = []
            for part in (w.real, w.imag):
                plus, minus = special.log_ndtr(k * part), special.log_ndtr(-k * part)
                out.append(np.concatenate([plus, minus], axis=2))
                out.append(np.concatenate([minus, plus], axis=2))
            return out[0], out[1], out[2], out[3]
        w = S[:, :, None] * u[:, None, :] + b[None, :, None]
        ar, ai = k * w.real, k * w.imag
        return special.log_ndtr(ar), special.log_ndtr(-ar), special.log_ndtr(ai), special.log_ndtr(-ai)

    def moments(self, Y, S, b):
        """Posterior moments for each row of ``Y`` (sign patterns) and ``S``.

        Returns ``(log_evidence, mean, second)`` of shape ``(n,)``.  The
        likelihood is evaluated as a product of normal CDFs; rows whose
        evidence underflows are redone in the log domain.
        """
        Y = np.atleast_2d(Y)
        S = np.broadcast_to(np.atleast_2d(S), Y.shape)
        b = np.asarray(b, dtype=complex)
        n, p = Y.shape
        chunk = max(1, _BLOCK // (self.size * p))
        k = math.sqrt(2.0 / self.sigma2)
        logev = np.empty(n)
        mean = np.empty(n, dtype=complex)
        second = np.empty(n)
        for lo in range(0, n, chunk):
            sl = slice(lo, lo + chunk)
            u, logw, _ = self.nodes(S[sl], b)
            w = S[sl][:, :, None] * u[:, None, :] + b[None, :, None]
            lik = np.prod(special.ndtr(k * Y[sl].real[:, :, None] * w.real)
                          * special.ndtr(k * Y[sl].imag[:, :, None] * w.imag), axis=1)
            e = lik * np.exp(logw)
            basis = np.stack([u.real, u.imag, u.real**2 + u.imag**2, np.ones(u.shape)], axis=-1)
            sums = (e[:, None, :] @ basis)[:, 0, :]
            den = sums[:, 3]
            with np.errstate(divide="ignore", invalid="ignore"):
                logev[sl] = np.log(den)
                mean[sl] = (sums[:, 0] + 1j * sums[:, 1]) / den
                second[sl] = sums[:, 2] / den
            bad = np.flatnonzero(~(den > 1e-250)) + lo
            if bad.size:
                logev[bad], mean[bad], second[bad] = self._moments_log(Y[bad], S[bad], b)
        return logev, mean, second

    def _moments_log(self, Y, S, b):
        u, logw, sym = self.nodes(S, b)
        lrp, lrm, lip, lim = self._log_factors(S, u, b, sym)
        yr = Y.real[:, :, None] > 0
        yi = Y.imag[:, :, None] > 0
        ll = np.sum(np.where(yr, lrp, lrm) + np.where(yi, lip, lim), axis=1)
        return self._reduce(ll, u, logw)

    def pattern_tables(self, S, b):
        """Exhaustive posterior tables for each state in ``S`` (shape ``(K, p)``).

        Returns ``(pmf, mean, second)`` each of shape ``(K, 4**p)`` with the
        pattern order of :func:`gnndr.channels.onebit_patterns`.
        """
        S = np.atleast_2d(np.asarray(S, dtype=complex))
        K, p = S.shape
        ch.onebit_patterns(p)  # capacity check
        b = np.asarray(b, dtype=complex)
        low = min(p, 5)
        npat = 4**p
        pmf = np.empty((K, npat))
        mean = np.empty((K, npat), dtype=complex)
        second = np.empty((K, npat))
        chunk = max(1, _BLOCK // (min(self.size, _BLOCK) * 4**low))
        for lo in range(0, K, chunk):
            Sc = S[lo:lo + chunk]
            u, logw, sym = self.nodes(Sc, b)
            nn = u.shape[1]
            # the symmetric fast path needs the whole node set at once
            step = nn if sym else max(1, _BLOCK // (Sc.shape[0] * 4**low))
            parts = [self._tables_block(Sc, u[:, a:a + step], logw[:, a:a + step], sym, b)
                     for a in range(0, nn, step)]
            if len(parts) == 1:
                lev, m, s2 = parts[0]
            else:
                levs = np.stack([q[0] for q in parts])
                with np.errstate(invalid="ignore"):
                    lev = np.logaddexp.reduce(levs, axis=0)
                    wts = np.exp(levs - lev)
                wts = np.nan_to_num(wts)
                m = sum(np.where(wk > 0, wk * q[1], 0.0) for wk, q in zip(wts, parts))
                s2 = sum(np.where(wk > 0, wk * q[2], 0.0) for wk, q in zip(wts, parts))
            sl = slice(lo, lo + Sc.shape[0])
            pmf[sl], mean[sl], second[sl] = np.exp(lev), m, s2
        return pmf, mean, second

    def _tables_block(self, Sc, u, logw, sym, b):
        """``(log_evidence, mean, second)`` of every pattern over one block of nodes."""
        kk, p = Sc.shape
        nn = u.shape[1]
        low = min(p, 5)
        lrp, lrm, lip, lim = self._log_factors(Sc, u, b, sym)
        # code = 2*[re<0] + [im<0]
        F = np.stack([lrp + lip, lrp + lim, lrm + lip, lrm + lim], axis=2)
        L = F[:, 0]
        for i in range(1, low):
            L = (F[:, i][:, :, None, :] + L[:, None, :, :]).reshape(kk, -1, nn)
        npat = 4**p
        lev = np.empty((kk, npat))
        mean = np.empty((kk, npat), dtype=complex)
        second = np.empty((kk, npat))
        for h in range(4 ** (p - low)):
            extra = np.zeros((kk, nn))
            digits = h
            for i in range(low, p):
                extra += F[:, i, digits % 4]
                digits //= 4
            with np.errstate(invalid="ignore", divide="ignore"):
                e, m, s2 = self._reduce(L + extra[:, None, :], u, logw)
            cols = slice(h * 4**low, (h + 1) * 4**low)
            lev[:, cols], mean[:, cols], second[:, cols] = e, m, s2
        return lev, mean, second


def moments_onebit_quadrature(spec: ChannelSpec, inp: GaussianInputSpec, y, s=None,
                              rule: QuadratureRule | int = DEFAULT_QUADRATURE_ORDER) -> PosteriorMoments:
    """Posterior moments of ``x`` given a one-bit output pattern ``y`` and state ``s``.

    Raises
    ------
    DegeneratePosteriorError
        If the pattern has probability below 1e-300 under the model.
    """
    if not spec.quantizer.is_onebit:
        raise InvalidStateError("channel is not one-bit quantized")
    if isinstance(rule, QuadratureRule) and rule.order < 16:
        raise InvalidArgumentError("one-bit quadrature needs order >= 16")
    p = spec.antennas
    y = np.asarray(y, dtype=complex).reshape(1, p)
    if not (np.all(np.abs(y.real) == 1) and np.all(np.abs(y.imag) == 1)):
        raise InvalidArgumentError("one-bit observations must have entries in {+-1 +- 1j}")
    s = spec.s if s is None else np.asarray(s, dtype=complex).reshape(p)
    quad = OnebitQuadrature(inp.power, spec.noise_power, rule)
    logev, mean, second = quad.moments(y, s[None], ch._dither_of(spec, inp))
    if logev[0] < LOG_TINY:
        raise DegeneratePosteriorError("sign pattern has vanishing probability")
    return _single(*_moments_from(mean, second))


def onebit_moments_with_state(spec: ChannelSpec, inp: GaussianInputSpec, y, s,
                              rule: QuadratureRule | int = DEFAULT_QUADRATURE_ORDER) -> PosteriorMoments:
    """One-bit posterior moments with the state supplied as receiver CSI (``v = s``)."""
    return moments_onebit_quadrature(spec, inp, y, s, rule)


def onebit_lmmse_closed_form(s, sigma2: float, P: float):
    """``E[x* y]`` and ``E[y y^H]`` of an undithered one-bit channel with state ``s``.

    Uses the Bussgang gain of the sign function and the arcsine law.
    ``s`` may be batched, shape ``(K, p)``.
    """
    s = np.atleast_2d(np.asarray(s, dtype=complex))
    var = (np.abs(s) ** 2 * P + sigma2) / 2.0
    cross = 2.0 * P * s / np.sqrt(2.0 * math.pi * var)
    inner = 0.5 * P * s[:, :, None] * s[:, None, :].conj()
    norm = np.sqrt(var[:, :, None] * var[:, None, :])
    rho_r = np.clip(inner.real / norm, -1.0, 1.0)
    rho_i = np.clip(inner.imag / norm, -1.0, 1.0)
    gram = (4.0 / math.pi) * (np.arcsin(rho_r) + 1j * np.arcsin(rho_i))
    idx = np.arange(s.shape[1])
    gram[:, idx, idx] = 2.0
    return cross, gram


# --------------------------------------------------------------------------
# Pilot-aided fading


def pilot_moments_radial(Y, YP, spec: ChannelSpec, P: float, nodes=(32, 64, 32)):
    """Posterior moments of ``x`` given ``(y, y_p)`` on an unquantized pilot channel.

    Batched over the leading axis of ``Y`` and ``YP`` (shape ``(n, p)``).
    ``nodes`` sets the Gauss-Legendre counts on the three radial intervals
    (below, around and above the posterior peak).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    YP = np.atleast_2d(np.asarray(YP, dtype=complex))
    n = Y.shape[0]
    chunk = max(1, _BLOCK // (4 * sum(nodes)))
    if n > chunk:
        parts = [_pilot_radial(Y[lo:lo + chunk], YP[lo:lo + chunk], spec, P, nodes) for lo in range(0, n, chunk)]
        return tuple(np.concatenate(z) for z in zip(*parts))
    return _pilot_radial(Y, YP, spec, P, nodes)


def _pilot_radial(Y, YP, spec, P, nodes):
    gain, var_s = spec.pilot_posterior()
    sigma2 = spec.noise_power
    p = Y.shape[1]
    shat = gain * YP
    A = np.sum(np.abs(shat) ** 2, axis=-1)
    a = np.sum(shat.conj() * Y, axis=-1)
    abs_a = np.abs(a)
    Y2 = np.sum(np.abs(Y) ** 2, axis=-1)

    # interval placement from a Gaussian (LMMSE) approximation of the posterior
    c0 = sigma2 + var_s * P
    mu = P * abs_a / (c0 + P * A)
    c_hi = sigma2 + var_s * np.maximum(P, 4.0 * mu**2)
    sd = np.sqrt(P * c_hi / (c_hi + P * A))
    R = np.maximum(9.0 * math.sqrt(P), mu + 12.0 * sd)
    lo = np.clip(mu - 10.0 * sd, 0.0, None)
    hi = np.minimum(mu + 10.0 * sd, R)

    rs, ws = [], []
    for (left, right), m in zip(((0.0 * lo, lo), (lo, hi), (hi, R)), nodes):
        t, w = _gauss_legendre(m)
        half = 0.5 * (right - left)
        rs.append(half[:, None] * t[None, :] + (0.5 * (right + left))[:, None])
        ws.append(half[:, None] * w[None, :])
    r = np.concatenate(rs, axis=1)
    w = np.concatenate(ws, axis=1)

    c = sigma2 + var_s * r**2
    kappa = 2.0 * r * abs_a[:, None] / c
    expo = (-(r**2) / P - p * np.log(c)
            - (Y2[:, None] + r**2 * A[:, None] - 2.0 * r * abs_a[:, None]) / c)
    expo -= np.max(expo, axis=1, keepdims=True)
    base = w * np.exp(expo)
    i0 = special.i0e(kappa)
    f0 = np.sum(base * r * i0, axis=1)
    f1 = np.sum(base * r**2 * special.i1e(kappa), axis=1)
    f2 = np.sum(base * r**3 * i0, axis=1)
    phase = np.where(abs_a > 0, a / np.where(abs_a > 0, abs_a, 1.0), 1.0)
    mean = phase * f1 / f0
    return _moments_from(mean, f2 / f0)


def pilot_state_posterior_sample(spec: ChannelSpec, YP, n: int, rng):
    """Draw ``n`` states per row of ``YP`` from ``p(s | y_p) = CN(s_hat, var_s I)``."""
    gain, var_s = spec.pilot_posterior()
    YP = np.atleast_2d(YP)
    shat = gain * YP
    return sample_cn(rng, shat[:, None, :], var_s, size=(YP.shape[0], n, YP.shape[1]))


def moments_pilot_snis(spec: ChannelSpec, inp: GaussianInputSpec, y, y_p,
                       n_s: int = DEFAULT_SNIS_SAMPLES, rng=None) -> PosteriorMoments:
    """Posterior moments on the pilot channel by self-normalized importance sampling.

    States are drawn from ``p(s|y_p)`` and weighted by the marginal
    likelihood ``p(y|s) = CN(y; 0, P s s^H + sigma2 I)``; the inner moments
    ``E[x|y,s]``, ``E[|x|^2|y,s]`` are Gaussian closed forms.

    Raises
    ------
    UnstableWeightsError
        If the effective sample size falls below 10.
    """
    if spec.variant != ch.PILOT or spec.quantizer.is_onebit:
        raise InvalidStateError("moments_pilot_snis needs an unquantized pilot channel")
    p = spec.antennas
    y = np.asarray(y, dtype=complex).reshape(p)
    y_p = np.asarray(y_p, dtype=complex).reshape(p)
    P, sigma2 = inp.power, spec.noise_power
    S = pilot_state_posterior_sample(spec, y_p[None], int(n_s), as_generator(rng))[0]
    norm2 = np.sum(np.abs(S) ** 2, axis=1)
    den = sigma2 + P * norm2
    proj = S.conj() @ y
    # log CN(y; 0, P s s^H + sigma2 I) up to s-independent constants
    logw = -np.log(den) + P * np.abs(proj) ** 2 / (sigma2 * den)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    ess = 1.0 / np.sum(w**2)
    if ess < MIN_EFFECTIVE_SAMPLES:
        raise UnstableWeightsError(f"effective sample size {ess:.1f} < {MIN_EFFECTIVE_SAMPLES:g}")
    m = P * proj / den
    om = P * sigma2 / den
    mean = np.sum(w * m)
    second = np.sum(w * (om + np.abs(m) ** 2))
    return _single(*_moments_from(mean, second))


def pilot_lmmse_closed_form(spec: ChannelSpec, P: float, YP):
    """Closed-form ``(cross, gram, lmmse)`` for the unquantized pilot channel, batched."""
    gain, var_s = spec.pilot_posterior()
    shat = gain * np.atleast_2d(YP)
    p = shat.shape[1]
    cross = P * shat
    gram = P * (shat[:, :, None] * shat[:, None, :].conj()) + (P * var_s + spec.noise_power) * np.eye(p)
    q = rank1_quadratic_form(P, shat, P * var_s + spec.noise_power, cross)
    return cross, gram, P - q


# --------------------------------------------------------------------------
# Engines: one per channel family, all batched.


class PosteriorEngine:
    """Batched posterior machinery for one channel family.

    Subclasses implement ``moments``; where the output law given ``v`` can
    be enumerated, ``inner_exact`` returns atom weights and per-atom
    ``omega`` / ``E|E[x|y,v]|^2``; ``lmmse`` returns linear statistics.
    """

    exact_inner = False

    def __init__(self, spec: ChannelSpec, inp: GaussianInputSpec, quadrature_order: int = DEFAULT_QUADRATURE_ORDER):
        self.spec = spec
        self.inp = inp
        self.P = inp.power
        self.sigma2 = spec.noise_power
        self.quadrature_order = quadrature_order

    # sampling ----------------------------------------------------------
    def sample(self, n, rng, x=None):
        return ch.sample_uses(self.spec, self.inp, n, rng, x=x)

    def sample_v(self, n, rng):
        """Outer draws of the CSI; ``None`` entries for channels without CSI."""
        if self.spec.variant == ch.LINEAR:
            return None
        uses = ch.sample_uses(self.spec, self.inp, n, rng)
        return uses.v

    def states_given_v(self, V, n, rng):
        """States drawn from ``p(s|v)``, shape ``(K, n, p)``."""
        p = self.spec.antennas
        if self.spec.variant == ch.LINEAR:
            return np.broadcast_to(self.spec.s, (1, n, p))
        if self.spec.variant == ch.PERFECT:
            return np.broadcast_to(V[:, None, :], (V.shape[0], n, p))
        return pilot_state_posterior_sample(self.spec, V, n, rng)

    def sample_given_v(self, V, n, rng):
        """Draw ``(x, y)`` pairs from ``p(x, y | v)``; shapes ``(K, n)`` and ``(K, n, p)``."""
        gen = as_generator(rng)
        S = self.states_given_v(V, n, gen)
        K = S.shape[0]
        p = self.spec.antennas
        uses = ch.sample_uses(self.spec, self.inp, K * n, gen, s=S.reshape(K * n, p))
        return uses.x.reshape(K, n), uses.y.reshape(K, n, p)

    def n_outer_of(self, V):
        return 1 if V is None else V.shape[0]

    # interface -----------------------------------------------------------
    def moments(self, Y, V):
        raise NotImplementedError

    def inner_exact(self, V):
        raise NotImplementedError

    def lmmse(self, V):
        raise NotImplementedError

    def moments_given_v(self, V, Y):
        """Moments for ``Y`` of shape ``(K, n, p)`` sharing ``V[k]`` along axis 1."""
        K, n, p = Y.shape
        Vrep = None if V is None else np.repeat(V, n, axis=0)
        mean, second, omega = self.moments(Y.reshape(K * n, p), Vrep)
        return mean.reshape(K, n), second.reshape(K, n), omega.reshape(K, n)


class GaussianEngine(PosteriorEngine):
    """Unquantized channel with known (fixed or CSI-revealed) state."""

    exact_inner = True

    def _states(self, V, n):
        if V is None:
            return np.broadcast_to(self.spec.s, (n, self.spec.antennas))
        return V

    def moments(self, Y, V):
        Y = np.atleast_2d(Y)
        return gaussian_moments(self._states(V, Y.shape[0]), Y, self.sigma2, self.P)

    def inner_exact(self, V):
        S = self._states(V, 1)
        den = self.sigma2 + self.P * np.sum(np.abs(S) ** 2, axis=-1)
        omega = (self.P * self.sigma2 / den)[:, None]
        return np.ones_like(omega), omega, self.P - omega

    def lmmse(self, V):
        S = np.atleast_2d(self._states(V, 1))
        p = S.shape[1]
        cross = self.P * S
        gram = self.P * S[:, :, None] * S[:, None, :].conj() + self.sigma2 * np.eye(p)
        lm = self.P - rank1_quadratic_form(self.P, S, self.sigma2, cross)
        return cross, gram, lm


class OnebitFixedEngine(PosteriorEngine):
    """One-bit (optionally dithered) channel with deterministic state: exact tables."""

    exact_inner = True

    def __init__(self, spec, inp, quadrature_order=DEFAULT_QUADRATURE_ORDER, rule="auto"):
        super().__init__(spec, inp, quadrature_order)
        if rule == "auto":
            rule = "lines" if spec.quantizer.dithered else "polar"
        if rule == "polar" and spec.quantizer.dithered:
            raise InvalidArgumentError("the polar rule needs sign boundaries through the origin (no dither)")
        self.quad = OnebitQuadrature(self.P, self.sigma2, quadrature_order, kind=rule, antennas=spec.antennas)
        self.b = ch._dither_of(spec, inp)
        self.patterns = ch.onebit_patterns(spec.antennas)
        pmf, mean, second = self.quad.pattern_tables(spec.s[None], self.b)
        self.pmf = pmf[0]
        self.mean, self.second, self.omega = _moments_from(mean[0], second[0])

    def moments(self, Y, V):
        idx = ch.pattern_index(np.atleast_2d(Y))
        return self.mean[idx], self.second[idx], self.omega[idx]

    def inner_exact(self, V):
        return self.pmf[None], self.omega[None], (np.abs(self.mean) ** 2)[None]

    def lmmse(self, V):
        w = self.pmf
        cross = np.sum((w * self.mean.conj())[:, None] * self.patterns, axis=0)
        gram = np.einsum("k,ki,kj->ij", w, self.patterns, self.patterns.conj())
        lm = self.P - _quad_form(cross[None], gram[None])
        return cross[None], gram[None], lm


class OnebitFadingEngine(PosteriorEngine):
    """Undithered one-bit channel with Rayleigh state revealed to the receiver."""

    def __init__(self, spec, inp, quadrature_order=DEFAULT_QUADRATURE_ORDER, rule="auto", max_patterns=256):
        super().__init__(spec, inp, quadrature_order)
        if rule == "auto":
            rule = "polar"
        self.quad = OnebitQuadrature(self.P, self.sigma2, quadrature_order, kind=rule,
                                     polar_nodes=FADING_POLAR_NODES, antennas=spec.antennas)
        self.b = np.zeros(spec.antennas, dtype=complex)
        self.exact_inner = 4**spec.antennas <= max_patterns

    def moments(self, Y, V):
        _, mean, second = self.quad.moments(np.atleast_2d(Y), V, self.b)
        return _moments_from(mean, second)

    def inner_exact(self, V):
        pmf, mean, second = self.quad.pattern_tables(V, self.b)
        mean, second, omega = _moments_from(mean, second)
        return pmf, omega, np.abs(mean) ** 2

    def lmmse(self, V):
        cross, gram = onebit_lmmse_closed_form(V, self.sigma2, self.P)
        return cross, gram, self.P - _quad_form(cross, gram)


class PilotEngine(PosteriorEngine):
    """Unquantized Rayleigh fading with a received pilot as CSI."""

    def moments(self, Y, V):
        return pilot_moments_radial(Y, V, self.spec, self.P)

    def lmmse(self, V):
        return pilot_lmmse_closed_form(self.spec, self.P, V)


def _quad_form(cross, gram):
    """Batched ``c^H G^-1 c`` with a small ridge, shape ``(K,)``."""
    p = gram.shape[-1]
    tr = np.real(np.trace(gram, axis1=-2, axis2=-1)) / p
    g = gram + (1e-12 * tr)[:, None, None] * np.eye(p)
    try:
        sol = np.linalg.solve(g, cross[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularityError("singular gram matrix") from exc
    q = np.real(np.sum(cross.conj() * sol, axis=-1))
    if not np.all(np.isfinite(q)):
        raise NumericalSingularityError("non-finite LMMSE quadratic form")
    return q


def make_engine(spec: ChannelSpec, inp: GaussianInputSpec,
                quadrature_order: int = DEFAULT_QUADRATURE_ORDER, onebit_rule: str = "auto") -> PosteriorEngine:
    """Pick the posterior engine for ``spec``.

    ``onebit_rule`` selects the one-bit quadrature: ``"hermite"``,
    ``"polar"``, ``"lines"`` or ``"auto"`` (polar, or lines when dithered).
    Raises ``NotImplementedError`` for one-bit quantized pilot channels
    (non-Gaussian state posterior).
    """
    q = spec.quantizer
    if spec.variant == ch.LINEAR:
        if q.is_onebit:
            return OnebitFixedEngine(spec, inp, quadrature_order, onebit_rule)
        return GaussianEngine(spec, inp, quadrature_order)
    if spec.variant == ch.PERFECT:
        if q.is_onebit:
            return OnebitFadingEngine(spec, inp, quadrature_order, onebit_rule)
        return GaussianEngine(spec, inp, quadrature_order)
    if q.is_onebit:
        raise NotImplementedError("posterior moments for one-bit quantized pilot channels")
    return PilotEngine(spec, inp, quadrature_order)


# --------------------------------------------------------------------------
# Conditional expectations given v


@dataclass(frozen=True)
class ConditionalMmse:
    """``E[omega | v]`` and its cross-check ``P - E[|E[x|y,v]|^2 | v]``."""

    value: float
    cross_check: float
    std_err: float
    n_samples: int

    @property
    def agrees(self) -> bool:
        return abs(self.value - self.cross_check) <= 3.0 * self.std_err + 1e-9


def _as_v(spec, v):
    if spec.variant == ch.LINEAR:
        return None
    return np.asarray(v, dtype=complex).reshape(1, spec.antennas)


def conditional_omega_mean(spec: ChannelSpec, inp: GaussianInputSpec, v=None, n: int = 4096, rng=None,
                           engine: Optional[PosteriorEngine] = None) -> ConditionalMmse:
    """``E[omega(y, v) | v]`` (the conditional MMSE).

    Exact (enumeration or closed form) where the engine supports it,
    Monte Carlo over ``y ~ p(y|v)`` otherwise.
    """
    engine = engine or make_engine(spec, inp)
    V = _as_v(spec, v)
    P = inp.power
    if engine.exact_inner:
        w, omega, m2 = engine.inner_exact(V)
        val = float(np.sum(w * omega))
        return ConditionalMmse(val, float(P - np.sum(w * m2)), 0.0, int(w.size))
    gen = as_generator(rng)
    _, Y = engine.sample_given_v(V, n, gen)
    mean, _, omega = engine.moments_given_v(V, Y)
    om, m2 = omega[0], np.abs(mean[0]) ** 2
    # the two estimators share draws; their difference has its own spread
    se = max(np.std(om, ddof=1), np.std(om + m2, ddof=1)) / math.sqrt(n)
    return ConditionalMmse(float(om.mean()), float(P - m2.mean()), float(se), int(n))


def lmmse_stats(spec: ChannelSpec, inp: GaussianInputSpec, v=None, n: int = 0, rng=None,
                method: str = "auto", engine: Optional[PosteriorEngine] = None) -> LmmseStats:
    """Linear MMSE statistics ``E[x* y|v]``, ``E[y y^H|v]`` and ``lmmse_v``.

    ``method="auto"`` uses closed forms / exhaustive sums where available;
    ``method="mc"`` estimates both moments from ``n`` draws of ``(x, y)|v``.
    """
    V = _as_v(spec, v)
    P = inp.power
    if method == "auto":
        engine = engine or make_engine(spec, inp)
        cross, gram, lm = engine.lmmse(V)
        return LmmseStats(cross[0], gram[0], float(lm[0]))
    if method != "mc":
        raise InvalidArgumentError(f"unknown method {method!r}")
    if n < 2:
        raise InvalidArgumentError("Monte Carlo LMMSE needs n >= 2")
    engine = engine or PosteriorEngine(spec, inp)
    X, Y = engine.sample_given_v(V, n, rng)
    X, Y = X[0], Y[0]
    prods = X.conj()[:, None] * Y
    outer = Y[:, :, None] * Y[:, None, :].conj()
    cross = prods.mean(axis=0)
    gram = outer.mean(axis=0)
    gram = 0.5 * (gram + gram.conj().T)
    lm = P - _quad_form(cross[None], gram[None])[0]
    se_c = (np.std(prods.real, axis=0, ddof=1) + 1j * np.std(prods.imag, axis=0, ddof=1)) / math.sqrt(n)
    se_g = (np.std(outer.real, axis=0, ddof=1) + 1j * np.std(outer.imag, axis=0, ddof=1)) / math.sqrt(n)
    return LmmseStats(cross, gram, float(lm), se_c, se_g)
