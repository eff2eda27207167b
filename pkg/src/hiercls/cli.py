"""Command-line entry point: dataset building, trace filtering, scoring,
toy GRPO training, evaluation, and the scoring service."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .dataset import (DatasetError, build_balanced_split, build_ood_set,
                      filter_synthetic_traces, read_corpus)
from .grpo import TrainConfig, make_separable_task, optimal_mean_reward, train
from .metrics import evaluate_file
from .rewards import RewardConfig, Scorer
from .taxonomy import Taxonomy, TaxonomyError

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_INTERNAL = 4


class InputError(Exception):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_snapshot(out_dir: Path, subcommand: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / f"{subcommand}.config.json",
                      json.dumps({"subcommand": subcommand, **resolved},
                                 sort_keys=True, indent=2) + "\n")


def _load_taxonomy(path) -> Taxonomy:
    try:
        return Taxonomy.from_file(path)
    except FileNotFoundError as exc:
        raise InputError(f"taxonomy file not found: {path}") from exc
    except TaxonomyError as exc:
        raise InputError(f"bad taxonomy file: {exc}") from exc


def _reward_config(args) -> RewardConfig:
    cfg = RewardConfig.from_file(args.reward_config) if args.reward_config else RewardConfig()
    if getattr(args, "mode", None):
        cfg = cfg.replace(main_mode=args.mode)
    return cfg


def _out_dir(args) -> Path:
    return Path(args.output_dir or os.environ.get("HIERCLS_OUTPUT_DIR", "."))


def cmd_build_dataset(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    try:
        corpus = read_corpus(args.corpus)
    except (FileNotFoundError, DatasetError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"bad corpus: {exc}") from exc
    try:
        manifest = build_balanced_split(
            corpus, taxonomy, min_instances=args.min_instances,
            per_class=args.per_class, test_fraction=args.test_fraction,
            seed=args.seed, accept_status=args.accept_status or None)
    except DatasetError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    manifest.to_file(out / "split_manifest.tsv")
    _write_snapshot(out, "build-dataset", {
        "taxonomy": str(args.taxonomy), "corpus": str(args.corpus),
        "min_instances": args.min_instances, "per_class": args.per_class,
        "test_fraction": args.test_fraction, "seed": args.seed,
        "accept_status": args.accept_status,
    })
    counts = manifest.per_subclass_counts()
    print(json.dumps({
        "subclasses": len(counts),
        "train": len(manifest.train_ids),
        "test": len(manifest.test_ids),
        "manifest": str(out / "split_manifest.tsv"),
    }))
    return 0


def cmd_build_ood(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    try:
        corpus = read_corpus(args.corpus)
        train_labels = set(Path(args.train_labels).read_text(encoding="utf-8").split())
    except (FileNotFoundError, DatasetError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from exc
    ids = build_ood_set(corpus, taxonomy, train_labels,
                        cap_per_class=args.cap_per_class, seed=args.seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "ood_ids.txt", "\n".join(ids) + ("\n" if ids else ""))
    _write_snapshot(out, "build-ood", {
        "taxonomy": str(args.taxonomy), "corpus": str(args.corpus),
        "train_labels": str(args.train_labels),
        "cap_per_class": args.cap_per_class, "seed": args.seed,
    })
    print(json.dumps({"ood_docs": len(ids), "output": str(out / "ood_ids.txt")}))
    return 0


def cmd_filter_traces(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    traces = []
    try:
        with open(args.input, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    row = json.loads(line)
                    traces.append({"raw": row["raw"], "gold": row["gold"]})
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"bad traces file: {exc}") from exc
    kept, rejected = filter_synthetic_traces(traces, taxonomy)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    kept_lines = [json.dumps(traces[i], sort_keys=True) for i in kept]
    atomic_write_text(out / "kept_traces.jsonl",
                      "\n".join(kept_lines) + ("\n" if kept_lines else ""))
    rej_lines = [json.dumps({"index": r.index, "reason": r.reason}) for r in rejected]
    atomic_write_text(out / "rejected_traces.jsonl",
                      "\n".join(rej_lines) + ("\n" if rej_lines else ""))
    _write_snapshot(out, "filter-traces", {"taxonomy": str(args.taxonomy),
                                           "input": str(args.input)})
    print(json.dumps({"kept": len(kept), "rejected": len(rejected)}))
    return 0


def cmd_score(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    cfg = _reward_config(args)
    scorer = Scorer(taxonomy, cfg)
    try:
        raw = Path(args.input).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"input file not found: {args.input}") from exc
    try:
        bd = scorer.score(raw, args.gold)
    except TaxonomyError as exc:
        raise InputError(f"bad gold code: {exc}") from exc
    print(json.dumps({**bd.to_dict(), "resolved_config": cfg.to_dict()},
                     sort_keys=True))
    return 0


def cmd_train_toy(args) -> int:
    task = make_separable_task(num_features=args.features, depth=args.depth,
                               branching=args.branching)
    cfg = TrainConfig(group_size=args.group_size, iterations=args.iterations,
                      learning_rate=args.learning_rate, kl_coef=args.kl_coef,
                      seed=args.seed)
    reward_cfg = _reward_config(args)
    _, log = train(task, cfg, reward_cfg)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    tmp_path = out / "training_log.jsonl"
    lines = [json.dumps(rec, sort_keys=True) for rec in log.records]
    atomic_write_text(tmp_path, "\n".join(lines) + "\n")
    _write_snapshot(out, "train-toy", {**cfg.to_dict(),
                                       "reward": reward_cfg.to_dict(),
                                       "features": args.features,
                                       "depth": args.depth,
                                       "branching": args.branching})
    scorer = Scorer(task.taxonomy, reward_cfg)
    print(json.dumps({
        "final_mean_reward": log.final_mean_reward,
        "optimal_mean_reward": optimal_mean_reward(task, scorer,
                                                   cfg.trace_target_tokens),
        "log": str(tmp_path),
    }))
    return 0


def cmd_evaluate(args) -> int:
    taxonomy = _load_taxonomy(args.taxonomy)
    try:
        report = evaluate_file(args.predictions, taxonomy,
                               level_source=args.level_source)
    except (FileNotFoundError, json.JSONDecodeError, KeyError, TaxonomyError,
            ValueError) as exc:
        raise InputError(f"bad predictions file: {exc}") from exc
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "eval_report.json",
                      json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    _write_snapshot(out, "evaluate", {"taxonomy": str(args.taxonomy),
                                      "predictions": str(args.predictions),
                                      "level_source": args.level_source})
    if args.format == "table":
        print(report.render_table())
    else:
        print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    taxonomy = _load_taxonomy(args.taxonomy)
    app = create_app(taxonomy, _reward_config(args), batch_cap=args.batch_cap)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiercls")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, taxonomy=True):
        if taxonomy:
            p.add_argument("--taxonomy", required=True)
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build-dataset", help="balanced split from a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-instances", type=int, default=50)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--accept-status", default="Accepted")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("build-ood", help="overlap-capped OOD document set")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--train-labels", required=True,
                   help="whitespace-separated training label codes")
    p.add_argument("--cap-per-class", type=int, default=10)
    p.set_defaults(func=cmd_build_ood)

    p = sub.add_parser("filter-traces", help="gold-consistency trace filter")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_filter_traces)

    p = sub.add_parser("score", help="score one output file against a gold code")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=["step", "final"], default=None)
    p.add_argument("--reward-config", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train-toy", help="GRPO on the synthetic task")
    common(p, taxonomy=False)
    p.add_argument("--features", type=int, default=32)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--learning-rate", type=float, default=3.0)
    p.add_argument("--kl-coef", type=float, default=0.001)
    p.add_argument("--mode", choices=["step", "final"], default=None)
    p.add_argument("--reward-config", default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("evaluate", help="per-level accuracy and F1")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--level-source", choices=["deepest_prefix", "per_step"],
                   default="deepest_prefix")
    p.add_argument("--format", choices=["jsonl", "table"], default="jsonl")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--batch-cap", type=int, default=256)
    p.add_argument("--mode", choices=["step", "final"], default=None)
    p.add_argument("--reward-config", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    import logging

    logging.basicConfig(level=os.environ.get("HIERCLS_LOG_LEVEL", "WARNING"),
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input_error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - single-line category per contract
        print(f"internal_error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
