"""Command-line entry point: ``slack-audit {gen,train,sweep,repro,table}``.

Exit status is 0 on success, 1 with a one-line diagnostic on any library
error, and 2 on flag misuse (argparse). ``repro`` exits 0 only when the
expected counterexample signature is detected.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from slack_audit.audit import (
    DEFAULT_TOLERANCE, TRAINERS, _policy_artifact, check_consistency, emit_report, parse_slacks,
    run_sweep, turning_points, write_documents,
)
from slack_audit.counterexamples import (
    THM2_PER_VALUE, DiscreteScoreSpec, exhaustive_pair_table, thm1_dataset, thm2_dataset,
)
from slack_audit.data import Dataset, Schema, load_csv, random_dataset
from slack_audit.errors import SlackAuditError
from slack_audit.gabos import METHODS, GabosConfig, GabosTrainer
from slack_audit.lagrange import TrainConfig, fit_lagrangian, train_unconstrained
from slack_audit.metrics import BiasNotion, bias, misclassification_loss
from slack_audit.postproc import MODES, Affine, RawColumn, ScoreFunction, ThresholdSearch

PROG = "slack-audit"
JOBS_ENV = "SLACK_AUDIT_JOBS"
PATH_TOL = 1e-9  # threshold paths are compared exactly up to float noise


def derive_seed(seed: int, label: str) -> int:
    """Sub-seed for the component named ``label``; stable across runs and
    platforms (CRC32 of the label, mixed by SeedSequence)."""
    ss = np.random.SeedSequence([seed, zlib.crc32(label.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# argument parsing


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a finite value >= 0: {text!r}")
    return v


def _pos_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _slacks(text: str) -> np.ndarray:
    try:
        s = parse_slacks(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad slack grid {text!r}: {e}")
    if len(s) == 0 or np.any(s < 0) or np.any(np.diff(s) <= 0):
        raise argparse.ArgumentTypeError(f"slack grid must be non-empty, >= 0 and strictly increasing: {text!r}")
    return s


def _score_spec(text: str) -> str:
    if text == "linear":
        return text
    if text.startswith("raw:"):
        try:
            if int(text[4:]) >= 0:
                return text
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"score must be 'raw:<column index>' or 'linear', got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed; components get derived sub-seeds (default 0)")
    p.add_argument("--jobs", type=_pos_int, default=None,
                   help=f"max concurrent per-slack trainings (default ${JOBS_ENV} or 1)")


def _add_data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="input CSV")
    p.add_argument("--schema", "--config", dest="schema", default=None,
                   help="key = value file mapping CSV columns (features, group_column, label_column, group_1, ...)")


def _add_trainer_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("post-processing")
    g.add_argument("--score", type=_score_spec, default="raw:0",
                   help="score for postproc: raw:<feature index> or linear (unconstrained hinge model)")
    g.add_argument("--mode", choices=MODES, default="normalized")
    g.add_argument("--refinement", type=int, default=0, help="extra grid points between adjacent blocks")
    g = p.add_argument_group("gabos")
    g.add_argument("--max-cells", type=_pos_int, default=GabosConfig.max_cells)
    g.add_argument("--partition", choices=METHODS, default=GabosConfig.method)
    g.add_argument("--min-cell", type=_pos_int, default=GabosConfig.min_cell)
    g = p.add_argument_group("lagrangian")
    g.add_argument("--epochs", type=_pos_int, default=TrainConfig.epochs)
    g.add_argument("--minibatch", type=_pos_int, default=TrainConfig.minibatch)
    g.add_argument("--lr-model", type=float, default=TrainConfig.lr_model)
    g.add_argument("--lr-multiplier", type=float, default=TrainConfig.lr_multiplier)
    g.add_argument("--margin", type=float, default=TrainConfig.margin)
    g.add_argument("--no-adam", dest="adam", action="store_false", help="plain SGD instead of Adam")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Train fairness-constrained classifiers and audit "
                                     "their predictions for monotonicity in the fairness slack.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("kind", choices=("thm1", "thm2", "random"))
    p.add_argument("--n", type=_pos_int, default=None,
                   help="thm1: records per group (default 4000); thm2: records per score value and group "
                        f"(default {THM2_PER_VALUE}); random: total records (default 200)")
    p.add_argument("--dim", type=_pos_int, default=2, help="random: feature dimension")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="fit one classifier at one slack")
    p.add_argument("--trainer", choices=TRAINERS, required=True)
    p.add_argument("--notion", choices=("dempar", "eqopp"), required=True)
    p.add_argument("--slack", type=_nonneg_float, required=True)
    _add_data(p)
    p.add_argument("--out", required=True, help="JSON description of the trained classifier")
    _add_trainer_options(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="train over a slack grid and audit slack-consistency")
    p.add_argument("--trainer", choices=TRAINERS, required=True)
    p.add_argument("--notion", choices=("dempar", "eqopp"), required=True)
    p.add_argument("--slacks", type=_slacks, required=True, help="lo:hi:step or a comma list")
    _add_data(p)
    p.add_argument("--report-json", default=None)
    p.add_argument("--curves-csv", default=None)
    p.add_argument("--thresholds-csv", default=None, help="per-slack thresholds (postproc and gabos only)")
    p.add_argument("--tolerance", type=_nonneg_float, default=None,
                   help="monotonicity tolerance (default: 1e-9 exact trainers, 1e-6 lagrangian)")
    p.add_argument("--all-witnesses", action="store_true", help="list every violating triple, not just the first")
    _add_trainer_options(p)
    _add_common(p)

    p = sub.add_parser("repro", help="reproduce a slack-inconsistency counterexample end to end")
    p.add_argument("which", choices=("thm1", "thm2"))
    p.add_argument("--thresholds-csv", default=None, help="also write the threshold path")
    _add_common(p)

    p = sub.add_parser("table", help="loss, bias and feasibility of every deterministic threshold pair")
    _add_data(p)
    p.add_argument("--notion", choices=("dempar", "eqopp"), required=True)
    p.add_argument("--slack", type=_nonneg_float, required=True)
    p.add_argument("--score", type=_score_spec, default="raw:0")
    p.add_argument("--out", required=True)
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve_jobs(args, parser) -> int:
    if args.jobs is not None:
        return args.jobs
    raw = os.environ.get(JOBS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        return _pos_int(raw.strip())
    except argparse.ArgumentTypeError as e:
        parser.error(f"{JOBS_ENV}: {e}")


def _print_config(command: str, cfg: dict) -> None:
    print(f"{PROG} {command}")
    for k in sorted(cfg):
        print(f"  {k} = {cfg[k]}")
    sys.stdout.flush()


def _jsonable(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise SlackAuditError(f"cannot write {path}: {e.strerror or e}") from e


def _load(args) -> Dataset:
    schema = Schema.from_file(args.schema) if args.schema else None
    return load_csv(args.data, schema)


def _schema_desc(args) -> str:
    return args.schema or "default (group, label, all other columns as features)"


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, minibatch=args.minibatch, lr_model=args.lr_model,
                       lr_multiplier=args.lr_multiplier, margin=args.margin, adam=args.adam,
                       seed=derive_seed(args.seed, "lagrangian"))


def _gabos_config(args) -> GabosConfig:
    return GabosConfig(max_cells=args.max_cells, method=args.partition, min_cell=args.min_cell)


def _score(spec: str, ds: Dataset, seed: int) -> ScoreFunction:
    if spec == "linear":
        m = train_unconstrained(ds, TrainConfig(seed=derive_seed(seed, "score")))
        return Affine(m.weights, m.offset)
    col = int(spec[4:])
    if col >= ds.dim:
        raise SlackAuditError(f"score column {col} out of range for {ds.dim} feature(s)")
    return RawColumn(col)


def _trainer_config(args) -> dict:
    if args.trainer == "postproc":
        return {"score": args.score, "mode": args.mode, "refinement": args.refinement}
    if args.trainer == "gabos":
        return {"max_cells": args.max_cells, "partition": args.partition, "min_cell": args.min_cell,
                "refinement": args.refinement}
    cfg = _train_config(args)
    return {f"train.{k}": v for k, v in vars(cfg).items()}


def _nonmonotone(seq) -> bool:
    seq = np.asarray(seq, dtype=np.float64)
    return len(seq) >= 3 and bool(turning_points(seq, PATH_TOL).any())


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, parser) -> int:
    n = args.n
    if n is None:
        n = {"thm1": 4000, "thm2": THM2_PER_VALUE, "random": 200}[args.kind]
    cfg = {"kind": args.kind, "n": n, "out": args.out, "seed": args.seed}
    if args.kind == "random":
        cfg["dim"] = args.dim
    _print_config("gen", cfg)
    if args.kind == "thm1":
        ds = thm1_dataset(n_per_group=n)
    elif args.kind == "thm2":
        ds = thm2_dataset(DiscreteScoreSpec(per_value=n))
    else:
        ds = random_dataset(np.random.default_rng(derive_seed(args.seed, "gen")), n, args.dim)
    _write_text(args.out, ds.to_csv())
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def cmd_train(args, parser) -> int:
    cfg = {"trainer": args.trainer, "notion": args.notion, "slack": args.slack, "data": args.data,
           "schema": _schema_desc(args), "out": args.out, "seed": args.seed, **_trainer_config(args)}
    _print_config("train", cfg)
    ds = _load(args)
    notion = BiasNotion.parse(args.notion)
    doc = {"trainer": args.trainer, "notion": notion.value, "slack": args.slack,
           "dataset_fingerprint": ds.fingerprint()}
    if args.trainer == "lagrangian":
        tc = _train_config(args)
        st = fit_lagrangian(ds, notion, args.slack, tc)
        hard = st.model.hard(ds.features)
        doc.update({"weights": st.model.weights.tolist(), "offset": st.model.offset,
                    "lam_plus": st.lam_plus, "lam_minus": st.lam_minus,
                    "hard_loss": misclassification_loss(hard, ds), "hard_bias": bias(notion, hard, ds)})
        summary = f"loss={doc['hard_loss']:.6g} bias={doc['hard_bias']:.6g}"
    else:
        if args.trainer == "gabos":
            trainer = GabosTrainer(ds, notion, _gabos_config(args), args.refinement)
            policy = trainer.train(args.slack)
            doc["model"] = trainer.model.dumps()
        else:
            search = ThresholdSearch(ds, _score(args.score, ds, args.seed), notion, args.mode, args.refinement)
            policy = search.solve(args.slack)
        doc.update(_policy_artifact(args.slack, policy))
        summary = f"loss={policy.loss:.6g} bias={policy.bias:.6g} tau1={policy.tau1.tau:.6g} tau2={policy.tau2.tau:.6g}"
    _write_text(args.out, json.dumps(_jsonable(doc), indent=1) + "\n")
    print(summary)
    return 0


def cmd_sweep(args, parser) -> int:
    jobs = _resolve_jobs(args, parser)
    tol = DEFAULT_TOLERANCE[args.trainer] if args.tolerance is None else args.tolerance
    cfg = {"trainer": args.trainer, "notion": args.notion,
           "slacks": ",".join(format(s, ".12g") for s in args.slacks), "data": args.data,
           "schema": _schema_desc(args), "report_json": args.report_json, "curves_csv": args.curves_csv,
           "thresholds_csv": args.thresholds_csv, "tolerance": tol, "all_witnesses": args.all_witnesses,
           "seed": args.seed, "jobs": jobs, **_trainer_config(args)}
    _print_config("sweep", cfg)
    ds = _load(args)
    kw = {"refinement": args.refinement, "jobs": jobs}
    if args.trainer == "postproc":
        kw.update(score=_score(args.score, ds, args.seed), mode=args.mode)
        config = None
    elif args.trainer == "gabos":
        config = _gabos_config(args)
    else:
        config = _train_config(args)
    sweep = run_sweep(args.trainer, ds, args.notion, args.slacks, config, **kw)
    report = check_consistency(sweep, tol, full=args.all_witnesses)
    docs = {}
    if args.report_json:
        docs.update(emit_report(report, sweep, "json"))
    if args.curves_csv or args.thresholds_csv:
        docs.update(emit_report(report, sweep, "csv"))
    if args.thresholds_csv and "thresholds.csv" not in docs:
        raise SlackAuditError("--thresholds-csv needs a threshold trainer (postproc or gabos)")
    write_documents(docs, {"report.json": args.report_json, "curves.csv": args.curves_csv,
                           "thresholds.csv": args.thresholds_csv})
    by_group = report.violations_by_group(sweep.groups)
    print(f"violations: {report.n_violations} of {len(ds)} individuals "
          f"(group 1: {by_group[1]}, group 2: {by_group[2]})")
    return 0


def cmd_repro(args, parser) -> int:
    if args.which == "thm1":
        slacks = parse_slacks("0:0.5:0.01")
        cfg = {"which": "thm1", "n_per_group": 4000, "notion": "dempar", "mode": "normalized",
               "slacks": "0:0.5:0.01", "thresholds_csv": args.thresholds_csv, "seed": args.seed}
        _print_config("repro", cfg)
        ds = thm1_dataset(n_per_group=4000)
        sweep = run_sweep("postproc", ds, "dempar", slacks, mode="normalized")
        grid = 1.0 / 4000  # one record of the larger group
        tau1 = np.array([a["thresholds"][0]["tau"] for a in sweep.artifacts])
        detected = _nonmonotone(tau1) and abs(tau1[-1] - 0.75) <= max(grid, 0.01)
        detail = f"tau1(0)={tau1[0]:.6g} min tau1={tau1.min():.6g} tau1({slacks[-1]:g})={tau1[-1]:.6g}"
    else:
        slacks = parse_slacks("0:1:0.01")
        cfg = {"which": "thm2", "per_value": THM2_PER_VALUE, "notion": "eqopp", "mode": "deterministic",
               "slacks": "0:1:0.01", "thresholds_csv": args.thresholds_csv, "seed": args.seed}
        _print_config("repro", cfg)
        ds = thm2_dataset()
        sweep = run_sweep("postproc", ds, "eqopp", slacks, mode="deterministic")
        tau1 = np.array([a["thresholds"][0]["tau"] for a in sweep.artifacts])
        tau2 = np.array([a["thresholds"][1]["tau"] for a in sweep.artifacts])
        detected = _nonmonotone(tau1) or _nonmonotone(tau2)
        changes = [0] + [j for j in range(1, len(slacks)) if (tau1[j], tau2[j]) != (tau1[j - 1], tau2[j - 1])]
        detail = "path " + " ".join(f"{slacks[j]:g}:({tau1[j]:g},{tau2[j]:g})" for j in changes)
    if args.thresholds_csv:
        report = check_consistency(sweep)
        write_documents(emit_report(report, sweep, "csv"), {"thresholds.csv": args.thresholds_csv})
    print(detail)
    if detected:
        print(f"{args.which}: slack-inconsistency reproduced")
        return 0
    print(f"{args.which}: signature not detected")
    return 1


def cmd_table(args, parser) -> int:
    cfg = {"data": args.data, "schema": _schema_desc(args), "notion": args.notion, "slack": args.slack,
           "score": args.score, "out": args.out, "seed": args.seed}
    _print_config("table", cfg)
    ds = _load(args)
    table = exhaustive_pair_table(ds, _score(args.score, ds, args.seed), args.notion, args.slack)
    _write_text(args.out, table.to_csv())
    print(f"{table.shape[0]}x{table.shape[1]} pairs, {int(table.feasible.sum())} feasible")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "sweep": cmd_sweep, "repro": cmd_repro, "table": cmd_table}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except (SlackAuditError, ValueError, OSError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
