"""Experiment configuration (JSON) and channel construction from plain parameters."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import channels as ch
from ._validation import check_finite, check_positive, parse_complex, parse_complex_vector
from .errors import ConfigError, GnndrError
from .gmi import DecoderVariant

MODES = ("gmi", "sweep", "bler", "dither-scan")
CHANNEL_ALIASES = {
    "linear": ch.LINEAR, "linearnostate": ch.LINEAR,
    "fading": ch.PERFECT, "perfect": ch.PERFECT, "fadingperfectcsi": ch.PERFECT,
    "pilot": ch.PILOT, "fadingpilotcsi": ch.PILOT,
}
QUANTIZER_ALIASES = {"none": "none", "onebit": "onebit", "one-bit": "onebit",
                     "onebit-dithered": "onebit-dithered", "dithered": "onebit-dithered"}
DEFAULT_DITHER_GRID = tuple(0.25 * k for k in range(9))


def channel_variant(name: str) -> str:
    key = str(name).replace("_", "").replace("-", "").lower()
    if name in ch.VARIANTS:
        return name
    if key not in CHANNEL_ALIASES:
        raise ConfigError(f"unknown channel variant {name!r}")
    return CHANNEL_ALIASES[key]


def build_channel(variant="LinearNoState", antennas: int = 1, snr_db: float = 0.0, input_power: float = 1.0,
                  quantizer: str = "none", alpha: float = 0.0, fading_power: float = 1.0,
                  fixed_s=None, pilot=None):
    """``(ChannelSpec, GaussianInputSpec)`` with ``sigma2 = P / 10^(snr_db/10)``.

    ``fixed_s`` defaults to unit-modulus entries with distinct phases; the
    pilot defaults to ``sqrt(P/2) (1 + j)``.
    """
    try:
        variant = channel_variant(variant)
        p = check_positive(antennas, "antennas", integer=True)
        P = check_positive(input_power, "input_power")
        snr_db = check_finite(snr_db, "snr_db")
        kind = QUANTIZER_ALIASES.get(str(quantizer).lower())
        if kind is None:
            raise ConfigError(f"unknown quantizer {quantizer!r}")
        q = ch.Quantizer(kind, check_finite(alpha, "alpha") if kind == "onebit-dithered" else 0.0)
        sigma2 = P / 10.0 ** (snr_db / 10.0)
        inp = ch.GaussianInputSpec(P)
        if variant == ch.LINEAR:
            s = ch.default_fixed_state(p) if fixed_s is None else (
                np.asarray(fixed_s, dtype=complex) if isinstance(fixed_s, np.ndarray)
                else parse_complex_vector(list(fixed_s), "fixed_s"))
            if s.size != p:
                raise ConfigError(f"fixed_s has {s.size} entries but antennas = {p}")
            return ch.ChannelSpec.linear(s, sigma2, q), inp
        if fixed_s is not None:
            raise ConfigError("fixed_s is only valid for LinearNoState")
        eta2 = check_positive(fading_power, "fading_power")
        if variant == ch.PERFECT:
            if pilot is not None:
                raise ConfigError("pilot is only valid for FadingPilotCsi")
            return ch.ChannelSpec.fading(p, sigma2, eta2, q), inp
        xp = ch.default_pilot(P) if pilot is None else parse_complex(pilot, "pilot")
        if xp == 0:
            raise ConfigError("pilot must be nonzero")
        return ch.ChannelSpec.pilot_aided(p, sigma2, xp, eta2, q), inp
    except ConfigError:
        raise
    except GnndrError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class ChannelConfig:
    variant: str = "LinearNoState"
    antennas: int = 1
    fading_power: float = 1.0
    fixed_s: Optional[list] = None
    pilot: Optional[object] = None
    quantizer: str = "none"
    alpha: float = 0.0


@dataclass
class SampleConfig:
    n: int = 100_000
    n_outer: int = 2000
    n_inner: int = 64
    n_s: int = 2**14


@dataclass
class BlerConfig:
    block_length: int = 256
    rate: Optional[float] = None
    rate_fraction: Optional[float] = None
    message_count: Optional[int] = None
    trials: int = 200
    variant: str = "opt"


@dataclass
class ExperimentConfig:
    mode: str = "gmi"
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    input_power: float = 1.0
    snr_grid_db: List[float] = field(default_factory=lambda: [0.0])
    variants: List[str] = field(default_factory=lambda: ["opt", "csi", "csf", "lin"])
    samples: SampleConfig = field(default_factory=SampleConfig)
    quadrature_order: int = 48
    seed: int = 0
    bler: Optional[BlerConfig] = None
    dither_grid: List[float] = field(default_factory=lambda: list(DEFAULT_DITHER_GRID))
    output_path: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def channel_at(self, snr_db: float, alpha: Optional[float] = None):
        c = self.channel
        return build_channel(c.variant, c.antennas, snr_db, self.input_power, c.quantizer,
                             c.alpha if alpha is None else alpha, c.fading_power, c.fixed_s, c.pilot)

    @property
    def variant_tags(self) -> List[DecoderVariant]:
        return [DecoderVariant.parse(v) for v in self.variants]


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    return cls(**data)


def config_from_dict(data: dict, mode: Optional[str] = None) -> ExperimentConfig:
    """Validate a config document; a run manifest (with a ``config`` key) is accepted too."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    data = dict(data)
    known = set(ExperimentConfig.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    try:
        cfg = ExperimentConfig(
            mode=mode or data.get("mode", "gmi"),
            channel=_section(ChannelConfig, data.get("channel"), "channel"),
            input_power=data.get("input_power", 1.0),
            snr_grid_db=data.get("snr_grid_db", [0.0]),
            variants=data.get("variants", ["opt", "csi", "csf", "lin"]),
            samples=_section(SampleConfig, data.get("samples"), "samples"),
            quadrature_order=data.get("quadrature_order", 48),
            seed=data.get("seed", 0),
            bler=None if data.get("bler") is None else _section(BlerConfig, data.get("bler"), "bler"),
            dither_grid=data.get("dither_grid", list(DEFAULT_DITHER_GRID)),
            output_path=data.get("output_path"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check and normalize ``cfg`` in place; every problem surfaces as :class:`ConfigError`."""
    try:
        return _validate(cfg)
    except ConfigError:
        raise
    except GnndrError as exc:
        raise ConfigError(str(exc)) from exc


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if not isinstance(cfg.snr_grid_db, list) or not cfg.snr_grid_db:
        raise ConfigError("snr_grid_db must be a nonempty list")
    cfg.snr_grid_db = [check_finite(v, "snr_grid_db entry") for v in cfg.snr_grid_db]
    if cfg.mode == "gmi" and len(cfg.snr_grid_db) != 1:
        raise ConfigError("gmi mode takes exactly one SNR point; use sweep for a grid")
    if not isinstance(cfg.variants, list) or not cfg.variants:
        raise ConfigError("variants must be a nonempty list")
    seen = []
    for v in cfg.variants:
        tag = DecoderVariant.parse(v).value
        if tag in seen:
            raise ConfigError(f"variant {tag!r} listed twice")
        seen.append(tag)
    cfg.variants = seen
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if isinstance(cfg.quadrature_order, bool) or not isinstance(cfg.quadrature_order, int) \
            or not 16 <= cfg.quadrature_order <= 128:
        raise ConfigError("quadrature_order must be an integer in [16, 128]")
    check_positive(cfg.input_power, "input_power")
    for name in ("n", "n_outer", "n_inner", "n_s"):
        check_positive(getattr(cfg.samples, name), f"samples.{name}", integer=True)
    if cfg.samples.n_outer < 2:
        raise ConfigError("samples.n_outer must be at least 2")
    cfg.channel.variant = channel_variant(cfg.channel.variant)
    cfg.channel_at(cfg.snr_grid_db[0])
    if cfg.mode == "dither-scan":
        if not isinstance(cfg.dither_grid, list) or not cfg.dither_grid:
            raise ConfigError("dither_grid must be a nonempty list")
        cfg.dither_grid = [check_finite(a, "dither_grid entry") for a in cfg.dither_grid]
        if cfg.channel.variant != ch.LINEAR or cfg.channel.quantizer not in ("onebit-dithered", "dithered"):
            raise ConfigError("dither-scan needs a LinearNoState channel with quantizer 'onebit-dithered'")
    if cfg.mode == "bler":
        b = cfg.bler or BlerConfig()
        cfg.bler = b
        check_positive(b.block_length, "bler.block_length", integer=True)
        check_positive(b.trials, "bler.trials", integer=True)
        if (b.rate is None) == (b.rate_fraction is None):
            raise ConfigError("bler needs exactly one of rate or rate_fraction")
        if b.rate is not None:
            check_positive(b.rate, "bler.rate", allow_zero=True)
        else:
            check_positive(b.rate_fraction, "bler.rate_fraction", allow_zero=True)
        if b.message_count is not None:
            check_positive(b.message_count, "bler.message_count", integer=True)
        DecoderVariant.parse(b.variant)
    return cfg


def load_config(path, mode: Optional[str] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data, mode)


def snr_from_sigma2(P: float, sigma2: float) -> float:
    return 10.0 * math.log10(P / sigma2)
