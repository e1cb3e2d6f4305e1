"""Command-line experiment runner.

``gnndr {gmi,sweep,bler,dither-scan} --config PATH [--seed U64] [--out PATH] [--threads N]``

Each run writes one CSV and a ``<stem>.manifest.json`` sidecar.  Grid
point ``i`` draws from the stream ``Rng(seed).child(i)``, so the CSV is
byte-identical across runs and thread counts.  Exit status: 0 on success,
2 on a configuration error (one JSON line on stderr), 3 when every grid
point failed numerically.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config
from .decoder import CodebookSpec, simulate_bler
from .errors import ConfigError, GnndrError
from .estimators import make_engine
from .gmi import DecoderVariant, evaluate_gmis, gnndr_functions
from .mathkernel import Rng

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3
UNITS = "nats"
GMI_COLUMNS = ("snr_db", "variant", "gmi_nats", "gmi_bits", "std_err", "n_samples", "clamped_fraction", "seed",
               "units", "status")
BLER_COLUMNS = ("snr_db", "variant", "gmi_nats", "rate_target", "rate_realized", "block_length", "message_count",
                "trials", "errors", "bler", "ci_low", "ci_high", "seed", "units", "status")
DITHER_COLUMNS = ("snr_db", "alpha", "variant", "gmi_nats", "gmi_bits", "std_err", "n_samples", "clamped_fraction",
                  "best", "seed", "units", "status")
NAN = float("nan")


@dataclass
class PointResult:
    rows: List[dict]
    ok: bool
    info: Dict[str, object] = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in columns) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _status(exc: BaseException) -> str:
    if isinstance(exc, GnndrError):
        return exc.code
    if isinstance(exc, NotImplementedError):
        return "not-implemented"
    if isinstance(exc, (ArithmeticError, FloatingPointError)):
        return "numerical"
    if isinstance(exc, MemoryError):
        return "capacity-exceeded"
    raise exc


def _gmi_rows(cfg: ExperimentConfig, snr, rng: Rng, alpha=None):
    spec, inp = cfg.channel_at(snr, alpha)
    engine = make_engine(spec, inp, cfg.quadrature_order)
    rep = evaluate_gmis(spec, inp, cfg.samples.n_outer, cfg.samples.n_inner, rng.generator(), cfg.variants, engine)
    rows = []
    for v in cfg.variant_tags:
        e = rep[v]
        rows.append(dict(snr_db=float(snr), variant=v.value, gmi_nats=e.nats, gmi_bits=e.bits, std_err=e.std_err,
                         n_samples=e.n_samples, clamped_fraction=rep.clamped_fraction, seed=cfg.seed, units=UNITS,
                         status="ok"))
    info = dict(n_outer=rep.n_outer, n_inner=rep.n_inner, exact_inner=rep.exact_inner,
                clamped=rep.clamped, n_values=rep.n_values)
    return rows, info


def _gmi_error_rows(cfg, snr, status, **extra):
    return [dict(snr_db=float(snr), variant=v, gmi_nats=NAN, gmi_bits=NAN, std_err=NAN, n_samples=0,
                 clamped_fraction=NAN, seed=cfg.seed, units=UNITS, status=status, **extra) for v in cfg.variants]


def run_gmi_point(cfg: ExperimentConfig, i: int) -> PointResult:
    snr = cfg.snr_grid_db[i]
    try:
        rows, info = _gmi_rows(cfg, snr, Rng(cfg.seed).child(i))
        return PointResult(rows, True, info)
    except Exception as exc:  # noqa: BLE001 - recorded per point, re-raised if not numerical
        code = _status(exc)
        return PointResult(_gmi_error_rows(cfg, snr, code), False, {"error": f"{code}: {exc}"})


def run_bler_point(cfg: ExperimentConfig, i: int) -> PointResult:
    snr = cfg.snr_grid_db[i]
    b = cfg.bler
    variant = DecoderVariant.parse(b.variant)
    point = Rng(cfg.seed).child(i)
    row = dict(snr_db=float(snr), variant=variant.value, gmi_nats=NAN, rate_target=NAN, rate_realized=NAN,
               block_length=0, message_count=0, trials=b.trials, errors=0, bler=NAN, ci_low=NAN, ci_high=NAN,
               seed=cfg.seed, units=UNITS, status="ok")
    try:
        spec, inp = cfg.channel_at(snr)
        engine = make_engine(spec, inp, cfg.quadrature_order)
        rep = evaluate_gmis(spec, inp, cfg.samples.n_outer, cfg.samples.n_inner, point.child(0).generator(),
                            [variant], engine)
        gmi = rep[variant].nats
        rate = b.rate if b.rate is not None else b.rate_fraction * gmi
        row.update(gmi_nats=gmi, rate_target=float(rate))
        cb = CodebookSpec(b.block_length, rate, b.message_count, seed=cfg.seed)
        fns = gnndr_functions(variant, spec, inp, engine, n=cfg.samples.n, n_inner=cfg.samples.n_inner,
                              rng=point.child(1))
        res = simulate_bler(spec, inp, variant, cb, b.trials, rng=point.child(2), fns=fns, keep_results=False)
        row.update(rate_realized=cb.realized_rate, block_length=cb.block_length, message_count=cb.message_count,
                   errors=res.errors, bler=res.bler, ci_low=res.ci_low, ci_high=res.ci_high)
        return PointResult([row], True, dict(n_outer=rep.n_outer, n_inner=rep.n_inner, clamped=rep.clamped,
                                             n_values=rep.n_values, trials=b.trials))
    except Exception as exc:  # noqa: BLE001
        code = _status(exc)
        row["status"] = code
        return PointResult([row], False, {"error": f"{code}: {exc}"})


def run_dither_point(cfg: ExperimentConfig, i: int) -> PointResult:
    snr = cfg.snr_grid_db[i]
    rows, infos, ok = [], [], False
    for alpha in cfg.dither_grid:
        try:
            # the same stream for every alpha: the scan compares on common draws
            r, info = _gmi_rows(cfg, snr, Rng(cfg.seed).child(i), alpha)
            ok = True
        except Exception as exc:  # noqa: BLE001
            code = _status(exc)
            r, info = _gmi_error_rows(cfg, snr, code), {"error": f"{code}: {exc}"}
        for row in r:
            row["alpha"] = float(alpha)
            row["best"] = False
        rows.extend(r)
        infos.append(dict(alpha=float(alpha), **info))
    best = {}
    for v in cfg.variants:
        cand = [r for r in rows if r["variant"] == v and r["status"] == "ok"]
        if cand:
            top = max(r["gmi_nats"] for r in cand)
            win = min((r for r in cand if r["gmi_nats"] == top), key=lambda r: r["alpha"])
            win["best"] = True
            best[v] = dict(alpha=win["alpha"], gmi_nats=win["gmi_nats"])
    return PointResult(rows, ok, dict(per_alpha=infos, best=best))


def dither_scan(cfg: ExperimentConfig, snr_index: int = 0):
    """``(best_alpha, table)`` for the first listed variant at one SNR point.

    ``table`` maps each ``alpha`` to its GMI in nats; ties go to the lowest ``alpha``.
    """
    res = run_dither_point(cfg, snr_index)
    v = cfg.variants[0]
    table = {r["alpha"]: r["gmi_nats"] for r in res.rows if r["variant"] == v}
    best = res.info["best"].get(v)
    return (None if best is None else best["alpha"]), table


RUNNERS = {"gmi": (run_gmi_point, GMI_COLUMNS), "sweep": (run_gmi_point, GMI_COLUMNS),
           "bler": (run_bler_point, BLER_COLUMNS), "dither-scan": (run_dither_point, DITHER_COLUMNS)}


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def run(cfg: ExperimentConfig, out: Optional[Path] = None, threads: int = 1) -> int:
    """Execute ``cfg``, write the CSV and manifest and return the exit status."""
    out = Path(out or cfg.output_path or f"{cfg.mode}.csv")
    cfg.output_path = str(out)
    runner, columns = RUNNERS[cfg.mode]

    def timed(i):
        t0 = time.perf_counter()
        res = runner(cfg, i)
        res.info["wall_clock_s"] = time.perf_counter() - t0
        return res

    idx = range(len(cfg.snr_grid_db))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(timed, idx))
    else:
        results = [timed(i) for i in idx]
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, columns, [r for res in results for r in res.rows])
    manifest = dict(
        version=__version__,
        config=cfg.to_dict(),
        csv=out.name,
        points=[dict(snr_db=cfg.snr_grid_db[i], ok=res.ok, **res.info) for i, res in enumerate(results)],
    )
    manifest_path(out).write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n", encoding="utf-8")
    return EXIT_OK if any(r.ok for r in results) else EXIT_ALL_FAILED


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnndr", description="GMI and BLER experiments for GNNDR decoders.")
    ap.add_argument("--version", action="version", version=f"gnndr {__version__}")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in RUNNERS:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON config (a run manifest also works)")
        p.add_argument("--seed", type=str, default=None, metavar="U64", help="override the config seed")
        p.add_argument("--out", default=None, metavar="PATH", help="CSV output path")
        p.add_argument("--threads", type=int, default=1, metavar="N")
    return ap


def _config_error(msg: str) -> int:
    sys.stderr.write(json.dumps({"error": "config", "message": msg}) + "\n")
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.mode)
        if args.seed is not None:
            try:
                seed = int(args.seed, 0)
            except ValueError:
                raise ConfigError(f"--seed: {args.seed!r} is not an integer") from None
            d = cfg.to_dict()
            d["seed"] = seed
            cfg = config_from_dict(d, args.mode)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        return _config_error(str(exc))
    status = run(cfg, args.out, args.threads)
    if status == EXIT_ALL_FAILED:
        sys.stderr.write(json.dumps({"error": "numerical", "message": "every grid point failed"}) + "\n")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
