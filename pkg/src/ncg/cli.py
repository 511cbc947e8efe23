"""Command-line front end: ``ncg {generate,train,eval,sweep,gradcheck}``.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric error.
``NCG_DETERMINISTIC=1`` pins BLAS to one thread, runs sweeps serially and
zeroes wall-clock fields so reruns give byte-identical outputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis as A
from . import config as C
from . import gradcheck as G
from . import model as M
from . import plots
from . import signals as S
from . import train as T
from .rng import stream

log = logging.getLogger("ncg")


class RuntimeFailure(RuntimeError):
    pass


def deterministic() -> bool:
    return os.environ.get("NCG_DETERMINISTIC", "") not in ("", "0")


def _limit_threads(n: int | None):
    if deterministic():
        n = 1
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- data -----------------------------------------------------------------------

def make_data(cfg: dict) -> tuple[S.Signal, S.Signal]:
    """Generate the train/test pair from independent seeded streams."""
    a, b = C.noise_specs(cfg)
    d = cfg["data"]
    n = d["n"]
    train = S.gen_mixture(a, b, d["tau"], n, stream(cfg["seed"], "data", "train"))
    test = S.gen_mixture(a, b, d["tau"], d.get("n_test", n), stream(cfg["seed"], "data", "test"))
    return train, test


def _data_meta(cfg: dict) -> dict:
    a, b = C.noise_specs(cfg)
    return {"a": a.to_dict(), "b": b.to_dict(), "tau": cfg["data"]["tau"], "n": cfg["data"]["n"],
            "n_test": cfg["data"].get("n_test", cfg["data"]["n"]), "seed": cfg["seed"]}


def load_data(cfg: dict, out: Path) -> tuple[S.Signal, S.Signal | None]:
    d = cfg["data"]
    if "csv" in d:
        col = d.get("column", 0)
        for key in ("csv", "test_csv"):
            if key in d and not Path(d[key]).exists():
                raise FileNotFoundError(f"missing data file {d[key]}")
        train = S.ingest_csv(d["csv"], col)
        test = S.ingest_csv(d["test_csv"], col) if "test_csv" in d else None
        return train, test
    return S.load_dataset(Path(d.get("dir", out / "data")))


# -- commands -------------------------------------------------------------------

def cmd_generate(cfg: dict, out: Path) -> dict:
    train, test = make_data(cfg)
    if len(train) != len(test):
        # truth.csv pairs the two envelopes row by row
        raise C.ConfigError("data.n_test must equal data.n when writing a dataset")
    paths = S.save_dataset(out / "data", train, test, _data_meta(cfg))
    return {k: str(v) for k, v in paths.items()}


def cmd_train(cfg: dict, out: Path, resume: bool = False) -> T.RunLog:
    train_sig, test_sig = load_data(cfg, out)
    ckpt = out / "checkpoint.npz"
    tcfg = C.train_config(cfg)
    if resume:
        if not ckpt.exists():
            raise FileNotFoundError(f"no checkpoint to resume from at {ckpt}")
        state = M.load(ckpt)
    else:
        state = M.build(C.model_spec(cfg), stream(cfg["seed"], "init"))
    out.mkdir(parents=True, exist_ok=True)
    try:
        run = T.train(state, train_sig, tcfg, test=test_sig, checkpoint=ckpt,
                      checkpoint_every=cfg["train"].get("checkpoint_every"))
    except T.DivergenceError as exc:
        M.save(exc.state, ckpt)
        raise RuntimeFailure(f"training diverged: {exc}; last good checkpoint saved to {ckpt}") from exc
    det = deterministic()
    if det:
        for r in run.records:
            r.seconds = 0.0
    prev = out / "runlog.csv"
    if resume and prev.exists():
        run.records = T.RunLog.from_csv(prev).records + run.records
    run.to_csv(prev)
    summary = run.summary(include_time=not det)
    summary["seed"] = cfg["seed"]
    summary["final_epoch"] = state.epoch
    _dump(out / "summary.json", summary)
    return run


def evaluate(state: M.ModelState, sig: S.Signal, cfg: dict, out: Path | None = None) -> dict:
    """Correlation and transition metrics for one model on one signal."""
    s = A.class_series(state, sig.samples)
    res = {}
    graph = A.transition_graph(s, cfg["eval"]["threshold"])
    res["transitions"] = graph
    res["empirical_ntic"] = A.empirical_ntic(A.argmax_classes(s))
    if sig.truth is not None and cfg["eval"]["correlation"]:
        r = A.class_correlations(s, sig.truth)
        res["pearson"] = r
        res["max_abs_pearson"] = float(np.abs(r).max())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        tj = json.loads(graph.to_json())
        tj["empirical_ntic"] = res["empirical_ntic"]
        _dump(out / "transitions.json", tj)
        graph.to_dot(out / "transitions.dot")
        if "pearson" in res:
            _dump(out / "correlation.json", {"pearson_per_class": [float(v) for v in res["pearson"]],
                                             "max_abs_pearson": res["max_abs_pearson"]})
            plots.overlay_plot(s.numpy()[0], s.time_offset, sig.truth, out / "overlay.svg",
                               cfg["eval"]["plot_points"])
    return res


def cmd_eval(cfg: dict, out: Path, checkpoint: Path | None = None) -> dict:
    ckpt = checkpoint or out / "checkpoint.npz"
    if not Path(ckpt).exists():
        raise FileNotFoundError(f"missing checkpoint {ckpt}")
    state = M.load(ckpt)
    train_sig, test_sig = load_data(cfg, out)
    sig = test_sig if test_sig is not None else train_sig
    if sig.truth is None and cfg["eval"]["correlation"]:
        warnings.warn("signal has no ground truth; skipping correlation", stacklevel=2)
    res = evaluate(state, sig, cfg, out)
    runlog = out / "runlog.csv"
    if runlog.exists():
        plots.training_curve(T.RunLog.from_csv(runlog), out / "training_curve.svg")
    return res


def _sweep_cell(args):
    cfg, out, value, seed = args
    cell = {"value": value, "seed": seed, "pearson": None, "final_Q": None, "error": ""}
    try:
        train_sig, test_sig = make_data(cfg)
        state = M.build(C.model_spec(cfg), stream(seed, "init"))
        run = T.train(state, train_sig, C.train_config(cfg), test=test_sig)
        res = evaluate(state, test_sig, cfg, out)
        cell["pearson"] = res.get("max_abs_pearson")
        cell["final_Q"] = run.final_test_q
        if out is not None:
            M.save(state, out / "checkpoint.npz")
    except Exception as exc:  # one failed cell must not abort the sweep
        cell["error"] = f"{type(exc).__name__}: {exc}"
    return cell


def cmd_sweep(cfg: dict, out: Path, parameter: str, values: list, seeds: list[int],
              threads: int = 1) -> list[dict]:
    if not values:
        raise C.ConfigError("sweep needs at least one value")
    if not seeds:
        raise C.ConfigError("sweep needs at least one seed")
    jobs = []
    for v in values:
        for sd in seeds:
            c = C.set_path(cfg, parameter, v)
            c["seed"] = sd
            jobs.append((c, out / f"{parameter}={v}" / f"seed={sd}", v, sd))
    if threads > 1 and not deterministic():
        with ProcessPoolExecutor(threads) as ex:
            rows = list(ex.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "seed", "pearson", "final_Q", "error"])
        for r in rows:
            w.writerow([r["value"], r["seed"], "" if r["pearson"] is None else repr(r["pearson"]),
                        "" if r["final_Q"] is None else repr(r["final_Q"]), r["error"]])
    return rows


def cmd_gradcheck(instances: int = 100, seed: int = 0) -> tuple[bool, str]:
    results = G.run(instances, seed)
    return all(r.passed for r in results), G.report(results)


# -- argument parsing -------------------------------------------------------------

def _parse_values(text: str) -> list:
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            vals.append(json.loads(tok))
        except json.JSONDecodeError:
            vals.append(tok)
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (overrides config 'output')")
    common.add_argument("--preset", choices=sorted(M.PRESETS), help="model preset")
    common.add_argument("--threads", type=int, default=None, help="worker/BLAS threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ncg", description="Neural coarse-graining experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write train/test/truth CSVs and meta.json")
    tr = sub.add_parser("train", parents=[common], help="train a model, write checkpoint and run log")
    tr.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.npz")
    ev = sub.add_parser("eval", parents=[common], help="correlation, transitions and plots")
    ev.add_argument("--checkpoint", type=Path)
    sw = sub.add_parser("sweep", parents=[common], help="train+eval over parameter values and seeds")
    sw.add_argument("--param", help="parameter name, e.g. cos_theta or train.batch_size")
    sw.add_argument("--values", help="comma-separated values")
    sw.add_argument("--seeds", help="comma-separated seeds")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--instances", type=int, default=100)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads(args.threads)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.preset:
            overrides["model"] = {"preset": args.preset}
        cfg = C.load(args.config, overrides)
        out = args.out or Path(cfg["output"])

        if args.command == "generate":
            paths = cmd_generate(cfg, out)
            print(json.dumps(paths, indent=2, sort_keys=True))
        elif args.command == "train":
            run = cmd_train(cfg, out, resume=args.resume)
            print(f"trained {len(run)} epochs; final train Q={run.final_train_q} test Q={run.final_test_q}")
        elif args.command == "eval":
            res = cmd_eval(cfg, out, args.checkpoint)
            if "max_abs_pearson" in res:
                print(f"max |pearson| = {res['max_abs_pearson']:.4f}")
            print(f"empirical NTIC = {res['empirical_ntic']:.4f} nats")
        elif args.command == "sweep":
            sweep = cfg.get("sweep", {})
            param = args.param or sweep.get("parameter")
            values = _parse_values(args.values) if args.values is not None else sweep.get("values")
            seeds = [int(s) for s in _parse_values(args.seeds)] if args.seeds else sweep.get("seeds", [cfg["seed"]])
            if not param:
                raise C.ConfigError("sweep needs --param (or sweep.parameter in the config)")
            rows = cmd_sweep(cfg, out, param, values or [], seeds, args.threads or 1)
            failed = sum(bool(r["error"]) for r in rows)
            print(f"sweep: {len(rows)} runs, {failed} failed -> {out / 'sweep.csv'}")
        elif args.command == "gradcheck":
            ok, text = cmd_gradcheck(args.instances, cfg["seed"])
            print(text)
            if not ok:
                return 2
        return 0
    except C.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, RuntimeFailure, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
