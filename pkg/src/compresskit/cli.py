"""Command-line interface for training, compression and order planning.

Exit codes: 0 on success, 1 on validation errors, 2 on planning
inconsistencies (precedence cycles or contradictory decision files).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .costs import cost_report
from .datasets import generate_dataset
from .pipeline import ExperimentConfig, load_config, run_pipeline, train_base_model
from .planner import CycleError, Edge, build_dag, toposort
from .repetition import evaluate_repetition
from .reporting import render_table, write_report
from .results import parse_decisions, write_records
from .stages import StageKind
from .sweeps import sweep_pairwise, validate_insertion
from .training import evaluate_accuracy


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=None, help="override config seeds")
    p.add_argument("--out", type=Path, default=None, help="override output directory")
    p.add_argument("--override-finetune-lr", type=float, default=None,
                   help="use this fine-tune learning rate instead of base/10")


def _load_cfg(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.override_finetune_lr is not None:
        overrides["override_finetune_lr"] = args.override_finetune_lr
    if args.config is None:
        return ExperimentConfig(**overrides)
    return load_config(args.config, overrides)


def _parse_pair(text: str) -> tuple:
    letters = [c for c in text.upper() if not c.isspace() and c != ","]
    if len(letters) != 2:
        raise ValueError(f"expected two stage letters, got {text!r}")
    return StageKind.from_letter(letters[0]), StageKind.from_letter(letters[1])


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = cfg.make_dataset()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        model = train_base_model(cfg, data, seed)
        acc = evaluate_accuracy(model, data.test_x, data.test_y)
        path = out / f"base_{cfg.arch}_w{cfg.width:g}_s{seed}.ckpt"
        save_checkpoint(model, path)
        print(f"seed {seed}: test accuracy {acc:.2f}%  -> {path}")
    return 0


def cmd_compress(args) -> int:
    cfg = _load_cfg(args)
    if not cfg.stages:
        print("note: no [[stage]] tables in config; running the identity pipeline")
    data = cfg.make_dataset()
    records = []
    for seed in cfg.seeds:
        records.extend(run_pipeline(cfg, seed, data=data))
    write_records(records, cfg.out_dir)
    for r in records:
        tau = "-" if r.tau is None else f"{r.tau:g}"
        print(f"{r.config_id}  tau={tau}  acc={r.accuracy:.2f}%  "
              f"bitops_cr={r.bitops_cr:.2f}x  cr={r.cr:.2f}x")
    print(f"records written to {cfg.out_dir}")
    return 0


def cmd_sweep_pair(args) -> int:
    cfg = _load_cfg(args)
    kind_x, kind_y = _parse_pair(args.pair)
    result = sweep_pairwise(cfg, kind_x, kind_y, n_configs=args.configs,
                            margin=args.margin, out_dir=cfg.out_dir,
                            workers=args.workers)
    for seed, dec in result.per_seed.items():
        label = str(dec.edge) if dec.edge else "inconclusive"
        print(f"seed {seed}: {label}  (hv {result.tag_xy}={dec.hv_first:.3f}, "
              f"hv {result.tag_yx}={dec.hv_second:.3f})")
    print(result.decision_summary())
    return 0


def cmd_validate_insertion(args) -> int:
    cfg = _load_cfg(args)
    outer = _parse_pair(args.outer)
    inserted = StageKind.from_letter(args.insert)
    report = validate_insertion(cfg, outer, inserted, n_configs=args.configs,
                                margin=args.margin, out_dir=cfg.out_dir)
    pair_label = str(report.pairwise_edge) if report.pairwise_edge else "inconclusive"
    ins_label = str(report.aggregate_edge) if report.aggregate_edge else "inconclusive"
    print(f"pairwise {outer[0].letter}{outer[1].letter}: {pair_label}")
    print(f"with {inserted.letter} inserted: {ins_label}")
    if report.consistent is None:
        print("consistency: undetermined (an arm was inconclusive)")
    else:
        print(f"consistency: {'preserved' if report.consistent else 'REVERSED'}")
    return 0


def cmd_plan(args) -> int:
    if args.edges:
        edges = []
        for part in args.edges.split(","):
            part = part.strip()
            if not part:
                continue
            sep = ">" if ">" in part else "-"
            a, _, b = part.partition(sep)
            edges.append(Edge(StageKind.from_letter(a.strip().lstrip("-")),
                              StageKind.from_letter(b.strip().lstrip(">-"))))
    elif args.decisions:
        rows = parse_decisions(args.decisions)
        edges = [Edge(StageKind.from_letter(a), StageKind.from_letter(b), margin)
                 for a, b, margin in rows]
    else:
        raise ValueError("plan needs --edges or --decisions")
    graph = build_dag(edges)
    order, unique = toposort(graph)
    label = " ".join(k.letter for k in order)
    print(f"{label} ({'unique' if unique else 'tie-broken by D<P<Q<E priority'})")
    for (a, b), margin in sorted(graph.edges.items(), key=lambda kv: (kv[0][0].priority,
                                                                      kv[0][1].priority)):
        print(f"  {a.letter}->{b.letter}  margin={margin:.3f}")
    return 0


def cmd_repeat_study(args) -> int:
    cfg = _load_cfg(args)
    kinds = ([StageKind.from_letter(args.stage)] if args.stage
             else [StageKind.DISTILL, StageKind.PRUNE, StageKind.QUANTIZE])
    for kind in kinds:
        report = evaluate_repetition(cfg, kind, seed=cfg.seeds[0])
        print(f"== repetition of {kind.name} (base pipeline: {report.base_tag or 'none'})")
        for arm, points in report.arms.items():
            best = max(points, key=lambda p: p.accuracy) if points else None
            if best is None:
                print(f"  {arm}: no points")
            else:
                print(f"  {arm}: best acc {best.accuracy:.2f}% at "
                      f"{best.bitops_cr:.1f}x bitops")
        if cfg.out_dir:
            records = [r for recs in report.records.values() for r in recs]
            write_records(records, Path(cfg.out_dir) / f"repeat_{kind.letter}")
    return 0


def cmd_report(args) -> int:
    table = write_report(args.results, args.report_dir)
    print(render_table(table))
    return 0


def cmd_cost(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.exit_heads and args.tau is not None:
        cfg = _load_cfg(args)
        data = cfg.make_dataset()
        report = cost_report(model, None, data.test_x, args.tau)
    else:
        report = cost_report(model)
    print(f"macs per layer:   {report.macs_per_layer}")
    print(f"bitops (static):  {report.bitops_static}")
    print(f"expected bitops:  {report.expected_bitops:.1f}")
    print(f"storage bits:     {report.storage_bits}")
    if report.exit_distribution:
        print(f"exit distribution: {report.exit_distribution}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compresskit",
        description="Train toy classifiers, compress them, and plan stage order.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_global_flags(p)
        p.set_defaults(fn=fn)
        return p

    add("train", cmd_train, "train the base model and save a checkpoint")
    add("compress", cmd_compress, "run the config's stage pipeline")

    p = add("sweep-pair", cmd_sweep_pair, "compare both orders of a stage pair")
    p.add_argument("--pair", required=True, help="two stage letters, e.g. DP")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)

    p = add("validate-insertion", cmd_validate_insertion,
            "check a pair's order with a third stage inserted")
    p.add_argument("--outer", required=True, help="outer pair letters, e.g. PE")
    p.add_argument("--insert", required=True, help="inserted stage letter")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--margin", type=float, default=0.05)

    p = add("plan", cmd_plan, "topologically sort precedence edges")
    p.add_argument("--edges", help="comma list like 'D>P,P>Q,Q>E'")
    p.add_argument("--decisions", type=Path, help="decisions file from sweep-pair")

    p = add("repeat-study", cmd_repeat_study, "repetition arms for D, P, Q")
    p.add_argument("--stage", help="single stage letter (default: D, P and Q)")

    p = add("report", cmd_report, "summary table and plot data from records")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--report-dir", type=Path, default=None)

    p = add("cost", cmd_cost, "cost accounting for a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--tau", type=float, default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if "inconsistent input" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
