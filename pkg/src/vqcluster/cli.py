"""Command-line surface.

Machine-readable JSON goes to stdout, diagnostics to stderr, so commands
compose in pipelines. Exit codes: 0 success, 1 usage error, 2 data error,
3 check failure. All randomness is surfaced as explicit --seed flags.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .clustering import (
    adjacency_cost,
    balanced_kmeans,
    hamiltonian_oracle,
    intra_cluster_stats,
    load_assignment,
    save_assignment,
)
from .codebook import Codebook, CodebookFormatError, load_codebook, save_codebook
from .losses import finite_diff_check
from .rearrange import PermutationMap, apply_permutation, build_permutation, save_permutation
from .sampling import SamplerConfig, sample_next_token
from .toytrain import SyntheticDatasetConfig, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad flags; the CLI contract
    reserves 2 for data errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _fail(code: int, message: str) -> int:
    sys.stderr.write(message.rstrip() + "\n")
    return code


def _load_codebook_or_none(path):
    try:
        return load_codebook(path)
    except (CodebookFormatError, OSError, ValueError) as exc:
        sys.stderr.write(f"cannot load codebook: {exc}\n")
        return None


def cmd_cluster(args) -> int:
    cb = _load_codebook_or_none(args.codebook)
    if cb is None:
        return EXIT_DATA
    if args.clusters < 1 or cb.n_codes % args.clusters:
        return _fail(
            EXIT_USAGE,
            f"--clusters {args.clusters} must divide the codebook size {cb.n_codes}",
        )
    asg = balanced_kmeans(cb, args.clusters, max_iters=args.max_iters, seed=args.seed)
    try:
        save_assignment(asg, args.out)
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot write assignment: {exc}")
    stats = intra_cluster_stats(cb, asg)
    _emit(
        {
            "n": asg.n,
            "m": asg.m,
            "iterations_run": asg.iterations_run,
            "converged": asg.converged,
            "inner_mse": stats.inner_mse,
        }
    )
    return EXIT_OK


def cmd_rearrange(args) -> int:
    cb = _load_codebook_or_none(args.codebook)
    if cb is None:
        return EXIT_DATA
    try:
        asg = load_assignment(args.assignment)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, f"cannot load assignment: {exc}")
    if len(asg.assignment) != cb.n_codes:
        return _fail(
            EXIT_DATA,
            f"assignment covers {len(asg.assignment)} points, codebook has {cb.n_codes}",
        )
    try:
        perm = build_permutation(asg)
    except ValueError as exc:
        return _fail(EXIT_DATA, str(exc))

    # Invariant gate: cluster j must own exactly the index block [j*m, (j+1)*m).
    if not np.array_equal(perm.forward // asg.m, asg.assignment):
        return _fail(EXIT_CHECK, "cluster-contiguity violated in built permutation")

    cost_before = adjacency_cost(cb, PermutationMap.identity(cb.n_codes))
    cost_after = adjacency_cost(cb, perm)
    try:
        save_codebook(apply_permutation(cb, perm), args.out_codebook, fmt="binary")
        save_permutation(perm, args.out_perm)
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot write output: {exc}")
    _emit({"n": asg.n, "m": asg.m, "cost_before": cost_before, "cost_after": cost_after})
    return EXIT_OK


def cmd_analyze(args) -> int:
    cb = _load_codebook_or_none(args.codebook)
    if cb is None:
        return EXIT_DATA
    doc = {"n_codes": cb.n_codes, "dim": cb.dim}
    doc["adjacency_cost"] = adjacency_cost(cb, PermutationMap.identity(cb.n_codes))
    if args.assignment:
        try:
            asg = load_assignment(args.assignment)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(EXIT_DATA, f"cannot load assignment: {exc}")
        if len(asg.assignment) != cb.n_codes:
            return _fail(
                EXIT_DATA,
                f"assignment covers {len(asg.assignment)} points, codebook has {cb.n_codes}",
            )
        stats = intra_cluster_stats(cb, asg)
        doc.update(
            {
                "inner_mse": stats.inner_mse,
                "mean": stats.mean_dist,
                "closest": stats.closest_dist,
                "largest": stats.largest_dist,
            }
        )
    _emit(doc)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cb = _load_codebook_or_none(args.codebook)
    if cb is None:
        return EXIT_DATA
    if cb.n_codes > args.limit:
        return _fail(
            EXIT_USAGE,
            f"codebook size {cb.n_codes} exceeds --limit {args.limit}; the exact "
            f"ordering oracle is exponential in N",
        )
    perm = hamiltonian_oracle(cb, limit=args.limit)
    _emit({"perm": [int(v) for v in perm.forward], "cost": adjacency_cost(cb, perm)})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.Generator(np.random.Philox(args.seed))
    lambdas = (0.0, 0.5, 1.0, 1.5)
    worst = 0.0
    for i in range(args.instances):
        m = int(rng.choice([1, 2, 4, 8]))
        n = int(rng.integers(1, 9))
        size = n * m
        logits = rng.standard_normal(size)
        target = int(rng.integers(size))
        err = finite_diff_check(logits, target, lambdas[i % len(lambdas)], n, m, h=1e-5)
        worst = max(worst, err)
    passed = worst < GRADCHECK_TOLERANCE
    _emit({"instances": args.instances, "max_rel_err": worst, "pass": passed})
    return EXIT_OK if passed else EXIT_CHECK


def cmd_sample(args) -> int:
    try:
        doc = json.loads(open(args.logits, encoding="ascii").read())
        cond = np.asarray(doc["cond"], dtype=np.float64)
        uncond = np.asarray(doc["uncond"], dtype=np.float64) if "uncond" in doc else None
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, f"cannot load logits: {exc}")
    try:
        config = SamplerConfig(
            cfg_scale=args.cfg,
            temperature=args.temperature,
            top_k=args.top_k,
            top_p=args.top_p,
            seed=args.seed,
            cfg_space=args.cfg_space,
        )
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))
    rng = np.random.Generator(np.random.Philox(config.seed))
    try:
        indices = [int(sample_next_token(cond, uncond, config, rng)) for _ in range(args.draws)]
    except ValueError as exc:
        return _fail(EXIT_DATA, str(exc))
    _emit({"indices": indices})
    return EXIT_OK


def _experiment_from_config(doc: dict):
    dataset = SyntheticDatasetConfig(**doc.get("dataset", {}))
    lambdas = doc.get("lambdas", [0.0, 1.0])
    train_doc = doc.get("train", {})
    params = {
        "epochs": int(train_doc.get("epochs", 60)),
        "lr": float(train_doc.get("lr", 0.8)),
        "embed_dim": int(train_doc.get("embed_dim", 8)),
        "train_seed": int(train_doc.get("seed", 1)),
    }
    return dataset, lambdas, params


def cmd_train_toy(args) -> int:
    try:
        doc = json.loads(open(args.config, encoding="ascii").read())
        dataset_cfg, lambdas, params = _experiment_from_config(doc)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        return _fail(EXIT_DATA, f"bad experiment config: {exc}")
    try:
        report = run_experiment(dataset_cfg, lambdas, **params)
    except ValueError as exc:
        return _fail(EXIT_DATA, str(exc))
    try:
        with open(args.out, "w", encoding="ascii") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        if args.loss_csv:
            with open(args.loss_csv, "w", encoding="ascii") as fh:
                fh.write("lambda,epoch,tce,cce,total\n")
                for run in report.runs:
                    for epoch, point in enumerate(run.loss_curve):
                        fh.write(f"{run.lam},{epoch},{point.tce!r},{point.cce!r},{point.total!r}\n")
    except OSError as exc:
        return _fail(EXIT_DATA, f"cannot write report: {exc}")
    _emit(
        {
            "lambdas": [run.lam for run in report.runs],
            "token_top1": {str(run.lam): run.accuracy.token_top1 for run in report.runs},
            "cluster_top1": {str(run.lam): run.accuracy.cluster_top1 for run in report.runs},
            "cluster_gain": report.cluster_gain,
        }
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vqcluster", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="balanced k-means over a codebook")
    p.add_argument("--codebook", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="assignment JSON output path")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("rearrange", help="apply the cluster-contiguous reorder")
    p.add_argument("--codebook", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--out-codebook", required=True)
    p.add_argument("--out-perm", required=True)
    p.set_defaults(func=cmd_rearrange)

    p = sub.add_parser("analyze", help="codebook / cluster distance statistics")
    p.add_argument("--codebook", required=True)
    p.add_argument("--assignment")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="exact minimum-cost ordering (small N only)")
    p.add_argument("--codebook", required=True)
    p.add_argument("--limit", type=int, default=12)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gradcheck", help="finite-difference check of loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1000)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sample", help="draw token indices from a logits file")
    p.add_argument("--logits", required=True, help='JSON {"cond": [...], "uncond": [...]}')
    p.add_argument("--cfg", type=float, default=0.0, help="guidance scale w (0 disables)")
    p.add_argument("--cfg-space", choices=("logit", "prob"), default="logit")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=0)
    p.add_argument("--top-p", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train-toy", help="run the synthetic loss-weight experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="full report JSON output path")
    p.add_argument("--loss-csv", help="optional per-epoch loss curve CSV")
    p.set_defaults(func=cmd_train_toy)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
