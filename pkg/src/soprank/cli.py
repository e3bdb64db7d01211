"""Command-line front end: gen-bench, train, rank, eval, distance.

Exit status: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .bench import EnvSpec, make_benchmark
from .clustering import ClusteringError
from .config import ConfigError, RunConfig, load_config
from .data import DataError, extract_states, load_trajectories
from .metrics import MetricError, RankedResult, policy_set_distance
from .model import CheckpointError, init_model, load_checkpoint
from .policy import PolicyError, load_policy, rank_labels
from .training import NumericalError, build_subset_pool, infer_scores, train

logger = logging.getLogger("soprank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(args, cfg: RunConfig) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(cfg.dumps(), encoding="utf-8")
    _write_json(out / "tool_version.json", {"soprank": __version__})
    return out


def _manifest(bench_dir: Path) -> dict:
    path = bench_dir / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read benchmark manifest {path}: {exc}") from exc


def _bench_dir(args, cfg: RunConfig) -> Path:
    d = getattr(args, "bench", None) or cfg.bench_dir
    if d is None:
        raise UsageError("benchmark directory not given (--bench or bench_dir in config)")
    return Path(d)


def _split_policies(bench_dir: Path, manifest: dict, part: str):
    by_id = {p["id"]: p for p in manifest["policies"]}
    ids = manifest["split"][part]
    pols = [load_policy(bench_dir / by_id[i]["path"]) for i in ids]
    rets = np.array([by_id[i]["true_return"] for i in ids])
    return ids, pols, rets


def _pool(cfg: RunConfig, bench_dir: Path, manifest: dict):
    trajs = load_trajectories(bench_dir / manifest["data"])
    ds = extract_states(trajs, task=manifest["env"]["name"], provenance=str(bench_dir))
    t = cfg.train
    return ds, build_subset_pool(ds, t.subset_size, t.n_subsets, cfg.scorer.K, cfg.seed, t.kmeans_iters)


def cmd_gen_bench(args, cfg: RunConfig) -> int:
    out = _prepare_out(args, cfg)
    b = cfg.bench
    bench = make_benchmark(
        cfg.env.build(),
        n_policies=b.n_policies,
        split=tuple(b.split),
        n_rollouts=b.n_rollouts,
        n_trajectories=b.n_trajectories,
        quality_range=tuple(b.quality_range),
        seed=cfg.seed,
    )
    path = bench.write(out)
    logger.info("wrote %s", path)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _prepare_out(args, cfg)
    bench_dir = _bench_dir(args, cfg)
    manifest = _manifest(bench_dir)
    env = EnvSpec.from_json(manifest["env"])
    _, pols, rets = _split_policies(bench_dir, manifest, "train")
    _, vpols, vrets = _split_policies(bench_dir, manifest, "val")
    ds, pool = _pool(cfg, bench_dir, manifest)
    model = init_model(cfg.scorer.build(env.state_dim + env.action_dim), cfg.seed)
    tc = cfg.train.build(cfg.seed)
    report = train(
        model, pols, rank_labels(rets, tc.eps_tie), ds, tc,
        pool=pool, val_policies=vpols, val_returns=vrets, out_dir=out,
    )
    logger.info("best epoch %s, final loss %.5f", report.best_epoch, report.losses[-1])
    return EXIT_OK


def _ranked(cfg: RunConfig, model, ids, pols, pool) -> RankedResult:
    res = infer_scores(model, pols, pool, cfg.rank.n_eval_subsets)
    return RankedResult(list(ids), res.mean_scores, ks=tuple(cfg.rank.ks), per_subset=res.per_subset)


def cmd_rank(args, cfg: RunConfig) -> int:
    out = _prepare_out(args, cfg)
    bench_dir = _bench_dir(args, cfg)
    manifest = _manifest(bench_dir)
    model = load_checkpoint(args.checkpoint)
    if args.policies:
        pols = [load_policy(p) for p in args.policies]
        ids = [Path(p).stem for p in args.policies]
    else:
        ids, pols, _ = _split_policies(bench_dir, manifest, args.split)
    _, pool = _pool(cfg, bench_dir, manifest)
    result = _ranked(cfg, model, ids, pols, pool)
    (out / "ranked.json").write_text(result.dumps() + "\n", encoding="utf-8")
    (out / "ranked.txt").write_text(result.to_table() + "\n", encoding="utf-8")
    if args.svg:
        result.to_svg(out / "ranked.svg")
    print(result.to_table())
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _prepare_out(args, cfg)
    ranked = json.loads(Path(args.ranked).read_text(encoding="utf-8"))
    manifest = _manifest(Path(args.truth).parent if Path(args.truth).is_file() else Path(args.truth))
    truth = {p["id"]: p["true_return"] for p in manifest["policies"]}
    ids = ranked["policy_ids"]
    missing = [i for i in ids if i not in truth]
    if missing:
        raise DataError(f"ranked policies missing from the truth manifest: {missing}")
    ks = tuple(args.k) if args.k else tuple(cfg.rank.ks)
    result = RankedResult(ids, ranked["scores"], true_returns=[truth[i] for i in ids], ks=ks)
    (out / "eval.json").write_text(result.dumps() + "\n", encoding="utf-8")
    if args.svg:
        result.to_svg(out / "eval.svg")
    print(result.to_table())
    return EXIT_OK


def cmd_distance(args, cfg: RunConfig) -> int:
    out = _prepare_out(args, cfg)
    train_p = [load_policy(p) for p in args.train_policies]
    test_p = [load_policy(p) for p in args.test_policies]
    ds = extract_states(load_trajectories(args.data))
    d = policy_set_distance(train_p, test_p, ds, max_states=cfg.distance_max_states)
    _write_json(out / "distance.json", {"distance": d, "n_states": ds.n_states,
                                        "n_train": len(train_p), "n_test": len(test_p)})
    print(f"{d:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="cap numeric library threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="soprank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-bench", parents=[common], help="generate a synthetic benchmark")
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("train", parents=[common], help="train the scoring model")
    p.add_argument("--bench", help="benchmark directory (overrides bench_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", parents=[common], help="score and rank policies")
    p.add_argument("--bench", help="benchmark directory holding the state data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--svg", action="store_true")
    p.add_argument("policies", nargs="*", help="policy JSON files (default: the benchmark split)")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", parents=[common], help="metrics of a ranking against ground truth")
    p.add_argument("--ranked", required=True)
    p.add_argument("--truth", required=True, help="benchmark manifest or its directory")
    p.add_argument("-k", type=int, action="append")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("distance", parents=[common], help="train/test policy-set distance")
    p.add_argument("--train-policies", nargs="+", required=True)
    p.add_argument("--test-policies", nargs="+", required=True)
    p.add_argument("--data", required=True, help="trajectory JSON-lines file")
    p.set_defaults(func=cmd_distance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        limit = nullcontext()
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            limit = threadpool_limits(limits=args.threads)
        with limit:
            return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"soprank: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PolicyError, MetricError, CheckpointError, ClusteringError, OSError) as exc:
        print(f"soprank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"soprank: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
