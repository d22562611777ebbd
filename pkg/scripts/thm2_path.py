"""Print the optimal deterministic threshold pair of the discrete equal-opportunity example."""
import argparse

from slack_audit.audit import parse_slacks, run_sweep
from slack_audit.counterexamples import thm2_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--slacks", default="0:1:0.01")
    ap.add_argument("--changes-only", action="store_true", help="only print slacks where the pair moves")
    args = ap.parse_args()

    ds = thm2_dataset()
    sweep = run_sweep("postproc", ds, "eqopp", parse_slacks(args.slacks), mode="deterministic")
    print("slack,tau1,tau2,loss,bias")
    prev = None
    for a in sweep.artifacts:
        pair = tuple(t["tau"] for t in a["thresholds"])
        if args.changes_only and pair == prev:
            continue
        prev = pair
        print(f"{a['slack']:.4g},{pair[0]:.6g},{pair[1]:.6g},{a['loss']:.6g},{a['bias']:.6g}")


if __name__ == "__main__":
    main()
