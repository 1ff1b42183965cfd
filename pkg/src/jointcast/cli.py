"""Command-line entry point: train, forecast, eval, lemma, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import data as D
from . import infer, lemma
from . import model as M
from . import train as T
from .evaluation import REPORT_SCHEMA, BenchProtocol, run_benchmark

log = logging.getLogger("jointcast")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _build(cls, section: dict, name: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise UsageError(f"{name}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"{name}: {exc}") from None


def _load_series(spec: dict, seed: int) -> list[D.Series]:
    if "csv" in spec:
        cols = spec.get("columns") or spec.get("column") or "value"
        return D.load_csv(spec["csv"], cols, spec.get("timestamp_column"))
    syn = dict(spec.get("synthetic", {"kind": "sine", "n": 4096, "period": 64}))
    return [_synth(syn, seed)]


def _synth(spec: dict, seed: int) -> D.Series:
    spec = dict(spec)
    kind = spec.pop("kind", "sine")
    spec.setdefault("seed", seed)
    try:
        if kind == "sine":
            return D.gen_sine(**spec)
        if kind == "two_period":
            return D.gen_two_period(**spec)
        if kind == "random_walk":
            return D.gen_random_walk(**spec)
    except TypeError as exc:
        raise UsageError(f"synthetic: {exc}") from None
    raise UsageError(f"synthetic: unknown kind {kind!r}")


# -- commands -----------------------------------------------------------------

def cmd_train(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    mcfg = _build(M.ModelConfig, cfg.get("model", {}), "model")
    tsec = dict(cfg.get("train", {}))
    if args.seed is not None:
        tsec["seed"] = args.seed
    if args.max_steps is not None:
        tsec["max_steps"] = args.max_steps
        tsec["warmup_steps"] = min(tsec.get("warmup_steps", T.TrainConfig.warmup_steps),
                                   args.max_steps)
    tcfg = _build(T.TrainConfig, tsec, "train")
    dsec = dict(cfg.get("data", {}))
    if args.data:
        dsec["csv"] = args.data
    if args.column:
        dsec["column"] = args.column
    series = _load_series(dsec, tcfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    effective = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "data": dsec}
    _write_json(out / "effective_config.json", effective)
    ckpt = T.train_loop(mcfg, tcfg, series, loss_csv=out / "loss.csv", dump_dir=out)
    T.checkpoint_save(ckpt, out / "checkpoint.jts")
    log.info("wrote %s", out / "checkpoint.jts")
    return 0


def forecast_rows(weights, cfg: M.ModelConfig, history, horizon, dcot, lookbacks):
    if lookbacks:
        qf = infer.mirror_ensemble_quantiles(weights, cfg, history, lookbacks, horizon, dcot)
    else:
        qf = infer.forecast_dcot(weights, cfg, history, horizon, dcot)
    flat = qf.flat()
    rows = []
    for t in range(horizon):
        for k, a in enumerate(qf.levels):
            rows.append((t + 1, f"{a:g}", float(flat[k, t])))
        rows.append((t + 1, "point", float(qf.median()[t])))
    return rows


def cmd_forecast(args, cfg: dict) -> int:
    sec = dict(cfg.get("forecast", {}))
    for key in ("horizon", "dcot", "lookbacks", "column"):
        val = getattr(args, key)
        if val is not None:
            sec[key] = val
    horizon = int(sec.get("horizon", 0))
    if horizon < 1:
        raise UsageError("forecast: --horizon must be >= 1")
    dcot = int(sec.get("dcot", 0))
    lookbacks = sec.get("lookbacks") or []
    if isinstance(lookbacks, str):
        lookbacks = _ints(lookbacks)
    ckpt = T.checkpoint_load(args.checkpoint)
    series = D.load_csv(args.input, sec.get("column", "value"))[0]
    too_long = [n for n in lookbacks if n > len(series)]
    if too_long:
        raise UsageError(f"forecast: lookback {too_long[0]} exceeds history length {len(series)}")
    rows = forecast_rows(ckpt.tensors(), ckpt.model_config, series.values, horizon, dcot,
                         lookbacks)
    out = Path(args.out) if args.out else Path(args.out_dir) / "forecast.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "level", "value"])
        wr.writerows((s, lv, repr(v)) for s, lv, v in rows)
    _write_json(out.with_name(out.stem + ".config.json"),
                {"checkpoint": str(args.checkpoint), "input": str(args.input), "horizon": horizon,
                 "dcot": dcot, "lookbacks": lookbacks, "column": sec.get("column", "value")})
    return 0


def cmd_eval(args, cfg: dict) -> int:
    psec = dict(cfg.get("protocol", {}))
    for key in ("lookback", "horizon", "stride", "seasonality"):
        val = getattr(args, key)
        if val is not None:
            psec[key] = val
    if args.dcot_grid is not None:
        psec["dcot_grid"] = _ints(args.dcot_grid)
    if args.seed is not None:
        psec["seeds"] = [args.seed]
    protocol = _build(BenchProtocol, psec, "protocol")
    ckpt = T.checkpoint_load(args.checkpoint)
    dsec = dict(cfg.get("data", {}))
    if args.dataset:
        dsec["csv"] = args.dataset
    if args.column:
        dsec["column"] = args.column
    try:
        series = _load_series(dsec, protocol.seeds[0] if protocol.seeds else 0)
    except D.InsufficientDataError as exc:
        raise D.InsufficientDataError(f"insufficient data: {exc}") from None
    report = run_benchmark(ckpt, series, protocol)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    _write_json(out / "report.schema.json", REPORT_SCHEMA)
    _write_json(out / "effective_config.json", {"protocol": protocol.to_dict(), "data": dsec,
                                                 "checkpoint": str(args.checkpoint)})
    return 0


def cmd_lemma(args, cfg: dict) -> int:
    sec = dict(cfg.get("lemma", {}))
    n_paths = _ints(args.n_paths) if args.n_paths else sec.get("n_paths", [1, 2, 4])
    horizons = _ints(args.horizons) if args.horizons else sec.get("horizons", [1, 2, 4, 8])
    eps_list = _floats(args.eps) if args.eps else sec.get("eps")
    trials = args.trials or sec.get("trials", 100_000)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    if trials < 1 or min(n_paths) < 1 or min(horizons) < 1:
        raise UsageError("lemma: n-paths, horizons and trials must be >= 1")
    rows = []
    for N in n_paths:
        for j in horizons:
            grid = eps_list or lemma.eps_grid(N, j)
            for i, eps in enumerate(grid):
                try:
                    bound = lemma.pz_bound(N, j, eps)
                except ValueError:
                    bound = None
                exact = lemma.exact_probability(N, j, eps)
                emp = lemma.deviation_prob(N, j, eps, trials, seed + 1000 * N + 10 * j + i)
                rows.append((N, j, eps, emp, exact, bound))
    out = Path(args.out) if args.out else Path(args.out_dir) / "lemma.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["N", "j", "eps", "empirical", "exact", "pz_bound"])
        for r in rows:
            wr.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4]),
                         "" if r[5] is None else repr(r[5])])
    _write_json(out.with_name(out.stem + ".config.json"),
                {"n_paths": n_paths, "horizons": horizons, "eps": eps_list, "trials": trials,
                 "seed": seed})
    return 0


def cmd_synth(args, cfg: dict) -> int:
    spec = dict(cfg.get("synth", {}))
    if args.kind:
        spec["kind"] = args.kind
    if args.n:
        spec["n"] = args.n
    if args.period:
        spec["period"] = args.period
    if args.noise is not None:
        spec["noise_std"] = args.noise
    spec.setdefault("kind", "sine")
    spec.setdefault("n", 4096)
    if spec["kind"] == "sine":
        spec.setdefault("period", 64)
    series = _synth(spec, args.seed if args.seed is not None else 0)
    series.name = "value"
    out = Path(args.out) if args.out else Path(args.out_dir) / "series.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(out, [series])
    return 0


COMMANDS = {"train": cmd_train, "forecast": cmd_forecast, "eval": cmd_eval,
            "lemma": cmd_lemma, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="jointcast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="masked-token training")
    t.add_argument("--data", help="training CSV")
    t.add_argument("--column")
    t.add_argument("--max-steps", type=int)

    f = sub.add_parser("forecast", parents=[common], help="DCoT / mirror-ensemble forecast")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--input", required=True)
    f.add_argument("--column")
    f.add_argument("--horizon", type=int)
    f.add_argument("--dcot", type=int)
    f.add_argument("--lookbacks", type=_ints)
    f.add_argument("--out")

    e = sub.add_parser("eval", parents=[common], help="benchmark sweep")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset")
    e.add_argument("--column")
    e.add_argument("--lookback", type=int)
    e.add_argument("--horizon", type=int)
    e.add_argument("--stride", type=int)
    e.add_argument("--seasonality", type=int)
    e.add_argument("--dcot-grid")

    lm = sub.add_parser("lemma", parents=[common], help="anti-concentration grid")
    lm.add_argument("--n-paths")
    lm.add_argument("--horizons", "--horizon")
    lm.add_argument("--eps")
    lm.add_argument("--trials", type=int)
    lm.add_argument("--out")

    s = sub.add_parser("synth", parents=[common], help="emit a synthetic series CSV")
    s.add_argument("--kind", choices=["sine", "two_period", "random_walk"])
    s.add_argument("--n", type=int)
    s.add_argument("--period", type=float)
    s.add_argument("--noise", type=float)
    s.add_argument("--out")
    return p


def _set_threads(n: int) -> None:
    if n < 1:
        raise UsageError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except D.InsufficientDataError as exc:
        msg = str(exc)
        print(f"error: {msg if msg.startswith('insufficient data') else 'insufficient data: ' + msg}",
              file=sys.stderr)
        return 1
    except (T.CheckpointError, D.CSVError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
