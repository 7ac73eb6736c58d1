"""Command line: train, variance, probs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import solver
from .config import load_config
from .errors import ConfigError, MVSError
from .experiments import run_variance_experiment, variance_csv_text
from .train import run_train


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvsgnn")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training job and write the metrics CSV")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--strategy")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--out")

    v = sub.add_parser("variance", help="Monte-Carlo variance comparison across strategies")
    v.add_argument("--config", required=True)
    v.add_argument("--trials", type=int)
    v.add_argument("--strategies")
    v.add_argument("--seed", type=int)
    v.add_argument("--batch-size", dest="batch_size", type=int)
    v.add_argument("--out")

    p = sub.add_parser("probs", help="solve for minimal-variance inclusion probabilities")
    p.add_argument("--gbar", required=True, help="CSV of nonnegative gradient norms")
    p.add_argument("--budget", required=True, type=float)
    return ap


def _read_gbar(path) -> np.ndarray:
    text = Path(path).read_text()
    vals = [tok for line in text.splitlines() if not line.lstrip().startswith("#")
            for tok in line.replace(",", " ").split()]
    try:
        return np.array([float(v) for v in vals])
    except ValueError as e:
        raise ConfigError("gbar", f"not numeric: {e}") from None


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(a) -> None:
    cfg = load_config(a.config, dict(seed=a.seed, strategy=a.strategy, batch_size=a.batch_size, out=a.out))
    res = run_train(cfg, write=False)
    _emit(res.csv_text(), cfg.out)
    stream = sys.stdout if cfg.out else sys.stderr
    print(json.dumps(res.summary, sort_keys=True), file=stream)


def cmd_variance(a) -> None:
    over = dict(seed=a.seed, batch_size=a.batch_size, out=a.out, trials=a.trials, strategies=a.strategies)
    cfg = load_config(a.config, over)
    reps = run_variance_experiment(cfg)
    _emit(variance_csv_text(reps), cfg.out)


def cmd_probs(a) -> None:
    g = _read_gbar(a.gbar)
    B = a.budget
    if B <= 0:
        raise ConfigError("budget", "must be positive")
    pv = solver.optimal_probs(g, B)
    out = dict(budget=pv.budget, kappa=pv.kappa, mu=pv.mu, probs=[repr(float(x)) for x in pv.probs],
               objective=solver.objective(g, pv.probs))
    print(json.dumps(out))


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    handler = {"train": cmd_train, "variance": cmd_variance, "probs": cmd_probs}[a.command]
    try:
        handler(a)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (MVSError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
