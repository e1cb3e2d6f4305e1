"""Generative channel models.

Every channel use draws ``x ~ CN(0, P)``, a state ``s``, receiver CSI ``v``
and an output ``y = s x + z`` (optionally one-bit quantized per real
dimension).  Three families are supported:

* ``LinearNoState``   -- deterministic ``s``; ``v`` is empty.
* ``FadingPerfectCsi`` -- Rayleigh ``s ~ CN(0, eta2 I)``; ``v = s``.
* ``FadingPilotCsi``   -- Rayleigh ``s``; ``v = x_p s + z_p`` (received pilot).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import CapacityExceededError, InvalidArgumentError, InvalidStateError
from .mathkernel import as_generator, sample_cn, std_normal_logcdf, std_normal_quantile

LINEAR = "LinearNoState"
PERFECT = "FadingPerfectCsi"
PILOT = "FadingPilotCsi"
VARIANTS = (LINEAR, PERFECT, PILOT)

MAX_EXHAUSTIVE_ANTENNAS = 8


@dataclass(frozen=True)
class Quantizer:
    """Receiver front end. ``kind`` is ``"none"``, ``"onebit"`` or ``"onebit-dithered"``."""

    kind: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "onebit", "onebit-dithered"):
            raise InvalidArgumentError(f"unknown quantizer kind {self.kind!r}")
        if not math.isfinite(self.alpha):
            raise InvalidArgumentError("dither alpha must be finite")

    @property
    def is_onebit(self) -> bool:
        return self.kind != "none"

    @property
    def dithered(self) -> bool:
        return self.kind == "onebit-dithered"


NO_QUANTIZER = Quantizer()
ONE_BIT = Quantizer("onebit")


def dithered(alpha: float) -> Quantizer:
    return Quantizer("onebit-dithered", float(alpha))


@dataclass(frozen=True)
class GaussianInputSpec:
    power: float = 1.0

    def __post_init__(self):
        if not (self.power > 0 and math.isfinite(self.power)):
            raise InvalidArgumentError("input power must be a positive finite real")


def default_pilot(power: float) -> complex:
    """``sqrt(P/2) + j sqrt(P/2)``."""
    a = math.sqrt(power / 2.0)
    return complex(a, a)


def default_fixed_state(antennas: int) -> np.ndarray:
    """Unit-modulus state with distinct, non-quarter-turn phases."""
    return np.exp(1j * np.pi * np.arange(antennas) / (2.0 * antennas + 1.0))


@dataclass(frozen=True)
class ChannelSpec:
    """Immutable description of a channel family."""

    variant: str
    antennas: int
    noise_power: float
    fading_power: float = 1.0
    fixed_s: Optional[tuple] = None
    pilot: Optional[complex] = None
    quantizer: Quantizer = field(default_factory=Quantizer)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown channel variant {self.variant!r}")
        if isinstance(self.antennas, bool) or int(self.antennas) != self.antennas or self.antennas < 1:
            raise InvalidArgumentError("antennas must be a positive integer")
        if not (self.noise_power > 0 and math.isfinite(self.noise_power)):
            raise InvalidArgumentError("noise_power must be positive and finite")
        if not (self.fading_power > 0 and math.isfinite(self.fading_power)):
            raise InvalidArgumentError("fading_power must be positive and finite")
        if (self.fixed_s is not None) != (self.variant == LINEAR):
            raise InvalidArgumentError("fixed_s is required for LinearNoState and only there")
        if (self.pilot is not None) != (self.variant == PILOT):
            raise InvalidArgumentError("pilot is required for FadingPilotCsi and only there")
        if self.fixed_s is not None:
            s = np.asarray(self.fixed_s, dtype=complex).ravel()
            if s.shape != (self.antennas,) or not np.all(np.isfinite(s)):
                raise InvalidArgumentError("fixed_s must be a finite vector of length antennas")
            object.__setattr__(self, "fixed_s", tuple(complex(c) for c in s))
        if self.pilot is not None:
            object.__setattr__(self, "pilot", complex(self.pilot))
        if self.quantizer.dithered and self.variant != LINEAR:
            raise InvalidArgumentError("dithered quantization requires a fixed state (LinearNoState)")

    # constructors -----------------------------------------------------
    @classmethod
    def linear(cls, s, noise_power, quantizer=NO_QUANTIZER):
        s = np.atleast_1d(np.asarray(s, dtype=complex))
        return cls(LINEAR, len(s), float(noise_power), fixed_s=tuple(s), quantizer=quantizer)

    @classmethod
    def fading(cls, antennas, noise_power, fading_power=1.0, quantizer=NO_QUANTIZER):
        return cls(PERFECT, int(antennas), float(noise_power), float(fading_power), quantizer=quantizer)

    @classmethod
    def pilot_aided(cls, antennas, noise_power, pilot, fading_power=1.0, quantizer=NO_QUANTIZER):
        return cls(PILOT, int(antennas), float(noise_power), float(fading_power),
                   pilot=complex(pilot), quantizer=quantizer)

    def with_noise_power(self, noise_power: float) -> "ChannelSpec":
        return replace(self, noise_power=float(noise_power))

    def with_quantizer(self, quantizer: Quantizer) -> "ChannelSpec":
        return replace(self, quantizer=quantizer)

    @property
    def s(self) -> np.ndarray:
        if self.fixed_s is None:
            raise InvalidStateError("channel has a random state")
        return np.asarray(self.fixed_s, dtype=complex)

    @property
    def has_csi(self) -> bool:
        return self.variant != LINEAR

    def pilot_posterior(self):
        """Per-entry posterior of ``s`` given the received pilot.

        Returns ``(gain, var)`` with ``E[s|y_p] = gain * y_p`` and error
        variance ``var`` per entry.
        """
        if self.variant != PILOT:
            raise InvalidStateError("pilot posterior requested on a channel without pilot")
        xp, eta2, s2 = self.pilot, self.fading_power, self.noise_power
        den = eta2 * abs(xp) ** 2 + s2
        return eta2 * xp.conjugate() / den, eta2 * s2 / den


@dataclass
class ChannelUse:
    x: complex
    s: np.ndarray
    v: Optional[np.ndarray]
    y: np.ndarray


@dataclass
class ChannelUses:
    """A batch of channel uses; arrays have the batch axis first."""

    x: np.ndarray
    s: np.ndarray
    v: Optional[np.ndarray]
    y: np.ndarray

    def __len__(self):
        return len(self.x)

    def __getitem__(self, k) -> ChannelUse:
        return ChannelUse(self.x[k], self.s[k], None if self.v is None else self.v[k], self.y[k])


@dataclass(frozen=True)
class DitherVector:
    b: np.ndarray


def one_bit(a: np.ndarray) -> np.ndarray:
    """Entrywise sign of real and imaginary parts with ``sgn(0) = +1``."""
    re = np.where(a.real >= 0, 1.0, -1.0)
    im = np.where(a.imag >= 0, 1.0, -1.0)
    return re + 1j * im


def dither_vector(spec: ChannelSpec, inp: GaussianInputSpec) -> DitherVector:
    """Heuristic dither ``b_i = alpha sqrt(P/2) s_i t_i`` with ``Psi(t_i) = i/(p+1)``."""
    if not spec.quantizer.dithered or spec.variant != LINEAR:
        raise InvalidStateError("dither_vector needs a dithered LinearNoState channel")
    p = spec.antennas
    t = std_normal_quantile(np.arange(1, p + 1) / (p + 1.0))
    t[np.abs(t) < 1e-15] = 0.0
    return DitherVector(spec.quantizer.alpha * math.sqrt(inp.power / 2.0) * spec.s * t)


def _dither_of(spec, inp):
    if spec.quantizer.dithered:
        return dither_vector(spec, inp).b
    return np.zeros(spec.antennas, dtype=complex)


def sample_states(spec: ChannelSpec, n: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    if spec.variant == LINEAR:
        return np.broadcast_to(spec.s, (n, spec.antennas)).copy()
    return sample_cn(gen, 0j, spec.fading_power, size=(n, spec.antennas))


def sample_uses(spec: ChannelSpec, inp: GaussianInputSpec, n: int, rng, x=None, s=None) -> ChannelUses:
    """Draw ``n`` independent channel uses.

    ``x`` (shape ``(n,)``) and ``s`` (shape ``(n, p)``) may be supplied to
    condition on given inputs or states; otherwise they are drawn.
    """
    gen = as_generator(rng)
    p = spec.antennas
    if x is None:
        x = sample_cn(gen, 0j, inp.power, size=n)
    else:
        x = np.asarray(x, dtype=complex).reshape(n)
    if s is None:
        s = sample_states(spec, n, gen)
    else:
        s = np.asarray(s, dtype=complex).reshape(n, p)
    z = sample_cn(gen, 0j, spec.noise_power, size=(n, p))
    y = s * x[:, None] + z
    if spec.quantizer.is_onebit:
        y = one_bit(y + _dither_of(spec, inp))
    v = None
    if spec.variant == PERFECT:
        v = s.copy()
    elif spec.variant == PILOT:
        zp = sample_cn(gen, 0j, spec.noise_power, size=(n, p))
        v = spec.pilot * s + zp
        if spec.quantizer.is_onebit:
            v = one_bit(v)
    return ChannelUses(x, s, v, y)


def sample_use(spec: ChannelSpec, inp: GaussianInputSpec, rng) -> ChannelUse:
    return sample_uses(spec, inp, 1, rng)[0]


@lru_cache(maxsize=None)
def _patterns(p: int) -> np.ndarray:
    # antenna i is digit i (little endian) of the base-4 index; digit = 2*[re<0] + [im<0]
    digits = np.array(list(itertools.product(range(4), repeat=p)))[:, ::-1]
    re = np.where(digits >= 2, -1.0, 1.0)
    im = np.where(digits % 2 == 1, -1.0, 1.0)
    out = re + 1j * im
    out.setflags(write=False)
    return out


def onebit_patterns(p: int) -> np.ndarray:
    """All ``4**p`` sign patterns, ordered consistently with :func:`pattern_index`."""
    if p > MAX_EXHAUSTIVE_ANTENNAS:
        raise CapacityExceededError(f"exhaustive enumeration limited to p <= {MAX_EXHAUSTIVE_ANTENNAS}")
    return _patterns(int(p))


def pattern_index(y) -> np.ndarray:
    """Index of the sign pattern(s) ``y`` (shape ``(..., p)``) in :func:`onebit_patterns`."""
    y = np.asarray(y)
    digit = 2 * (y.real < 0) + (y.imag < 0)
    powers = 4 ** np.arange(y.shape[-1])
    return np.sum(digit * powers, axis=-1)


def onebit_log_factors(s, b, sigma2: float, u):
    """Per-antenna log-probabilities of ``+1`` and ``-1`` outputs.

    ``u`` holds candidate inputs (any shape ``U``); returns four arrays of
    shape ``U + (p,)``: log P(yR=+1), log P(yR=-1), log P(yI=+1), log P(yI=-1).
    """
    s = np.asarray(s, dtype=complex)
    w = np.asarray(u)[..., None] * s + b
    k = math.sqrt(2.0 / sigma2)
    ar, ai = k * w.real, k * w.imag
    return (std_normal_logcdf(ar), std_normal_logcdf(-ar),
            std_normal_logcdf(ai), std_normal_logcdf(-ai))


def conditional_output_pmf_onebit(spec: ChannelSpec, inp: GaussianInputSpec, x: complex, s=None, b=None) -> np.ndarray:
    """Probabilities of all ``4**p`` output patterns given input ``x`` and state ``s``.

    Ordered as :func:`onebit_patterns`.  ``b`` defaults to the channel's dither
    (zero when undithered).
    """
    if not spec.quantizer.is_onebit:
        raise InvalidStateError("channel is not one-bit quantized")
    p = spec.antennas
    pats = onebit_patterns(p)
    s = spec.s if s is None else np.asarray(s, dtype=complex).reshape(p)
    b = _dither_of(spec, inp) if b is None else np.asarray(getattr(b, "b", b), dtype=complex)
    lrp, lrm, lip, lim = onebit_log_factors(s, b, spec.noise_power, np.asarray(complex(x)))
    logp = np.where(pats.real > 0, lrp, lrm) + np.where(pats.imag > 0, lip, lim)
    return np.exp(logp.sum(axis=-1))
