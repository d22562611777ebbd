"""Threshold-post-process a score column of a CSV across slacks and write the audit documents."""
import argparse

from slack_audit.audit import check_consistency, emit_report, parse_slacks, run_sweep, write_documents
from slack_audit.data import load_csv
from slack_audit.postproc import RawColumn


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("data")
    ap.add_argument("--column", type=int, default=0, help="feature index used as the score")
    ap.add_argument("--notion", default="dempar")
    ap.add_argument("--mode", default="normalized", choices=["normalized", "deterministic"])
    ap.add_argument("--slacks", default="0:0.3:0.01")
    ap.add_argument("--report-json", default="report.json")
    ap.add_argument("--thresholds-csv", default="thresholds.csv")
    args = ap.parse_args()

    ds = load_csv(args.data)
    sweep = run_sweep("postproc", ds, args.notion, parse_slacks(args.slacks),
                      score=RawColumn(args.column), mode=args.mode)
    report = check_consistency(sweep)
    docs = {**emit_report(report, sweep, "json"), **emit_report(report, sweep, "csv")}
    write_documents(docs, {"report.json": args.report_json, "thresholds.csv": args.thresholds_csv})
    print(f"violations: {report.n_violations} of {len(ds)}; wrote {args.report_json}, {args.thresholds_csv}")


if __name__ == "__main__":
    main()
