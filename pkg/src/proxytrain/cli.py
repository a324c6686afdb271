"""Command line entry point.

Exit codes: 0 success, 1 invalid input (config, checkpoint or data),
2 a numerical tolerance check failed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .checkpoint import CheckpointError, ConfigMismatchError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import Dataset
from .evaluation import evaluate_retrieval, extract_embeddings
from .retrieval import RetrievalConfig, ablate, build_model, make_data, train_retrieval
from .selftrain import run_selftrain

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2
METRICS_COLUMNS = ("epoch", "iteration", "loss", "dev_r1")
ABLATION_COLUMNS = ("name", "mean_r1", "std_r1", "n_seeds", "scores")


class InputError(Exception):
    """A user-supplied file or option cannot be used."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here 2 is reserved for tolerance failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _prepare(run: RunConfig) -> Path:
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(run.to_ini())
    return out


def cmd_gradcheck(args) -> int:
    results = gc.run_gradcheck(instances=args.instances, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed (tolerance {gc.TOLERANCE:g}): {', '.join(failed)}",
              file=sys.stderr)
        return EXIT_TOLERANCE
    print(f"all {len(results)} components within {gc.TOLERANCE:g}")
    return EXIT_OK


def cmd_train_retrieval(args) -> int:
    run = load_config(args.config, "train-retrieval")
    out = _prepare(run)
    cfg = run.experiment
    data = make_data(cfg)
    result = train_retrieval(cfg, data)
    _write_csv(out / "metrics.csv", METRICS_COLUMNS,
               [[h["epoch"], h["iteration"], repr(h["loss"]), repr(h["dev_r1"])]
                for h in result.history])
    (out / "report.txt").write_text(result.report.to_text())
    params = dict(result.model.params, proxies=result.proxies.proxies)
    save_checkpoint(out / "checkpoint.npz", params, run.hash(), run.canonical())
    data.save(out / "data")
    print(result.report.to_text(), end="")
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = load_config(args.config, "ablate")
    out = _prepare(run)
    spec = run.ablate
    rows = ablate(run.experiment, spec["seeds"], spec["toggles"], spec["mode"])
    _write_csv(out / "ablation.csv", ABLATION_COLUMNS,
               [[r["name"], f"{r['mean_r1']:.6f}", f"{r['std_r1']:.6f}", len(r["scores"]),
                 ";".join(f"{s:.6f}" for s in r["scores"])] for r in rows])
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        print(f"{r['name']:<{width}}  R@1 {r['mean_r1']:.4f} +- {r['std_r1']:.4f}")
    return EXIT_OK


def cmd_selftrain(args) -> int:
    run = load_config(args.config, "selftrain")
    out = _prepare(run)
    trainer, result = run_selftrain(run.experiment)
    (out / "results.csv").write_text(result.to_csv())
    (out / "summary.txt").write_text(
        f"strategy={run.experiment.strategy}\nbest_path={result.best_path}\n"
        f"best_dev={result.best_dev:.17g}\nbest_test={result.best_test:.17g}\n")
    save_checkpoint(out / "checkpoint.npz", result.best_learner.params, run.hash(),
                    run.canonical())
    print(f"best path {str(result.best_path) or '(stage 0)'}: dev {result.best_dev:.4f} "
          f"test {result.best_test:.4f}")
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    expected = load_config(args.config, "train-retrieval").hash() if args.config else None
    params, meta = load_checkpoint(args.checkpoint, expected)
    experiment = meta.get("config", {}).get("experiment")
    if meta.get("config", {}).get("command") not in ("train-retrieval", "ablate") or not experiment:
        raise CheckpointError(args.checkpoint, "not a retrieval checkpoint")
    cfg = RetrievalConfig(**experiment)
    model = build_model(cfg, np.random.default_rng(0))
    model.load_state({k: v for k, v in params.items() if k != "proxies"})
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").is_file():
        raise InputError(f"{data_dir}: no dataset manifest")
    data = Dataset.load(data_dir)
    split = args.split if args.split != "all" else None
    if split is not None:
        data = data.subset(split)
    if len(data.labels) < 2:
        raise InputError(f"split {args.split!r} has fewer than 2 examples")
    emb = extract_embeddings(model, data.inputs)
    report = evaluate_retrieval(emb, data.labels, rng=np.random.default_rng([cfg.seed, 5]))
    print(report.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxytrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gradcheck", help="finite-difference check of every loss and layer")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    for name, func, text in (("train-retrieval", cmd_train_retrieval, "train one retrieval model"),
                             ("ablate", cmd_ablate, "ProxyNCA++ enhancement ablation grid"),
                             ("selftrain", cmd_selftrain, "FIST/GIST/RIST self-training")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)
    p = sub.add_parser("eval", help="retrieval metrics of a checkpoint on a saved dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", help="split to evaluate, or 'all'")
    p.add_argument("--config", help="refuse the checkpoint unless it was made with this config")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
    except ConfigMismatchError as exc:
        print(f"refusing checkpoint: expected config hash {exc.expected}, "
              f"checkpoint has {exc.found}", file=sys.stderr)
    except (CheckpointError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
