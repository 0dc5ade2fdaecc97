#!/usr/bin/env python3
"""Independent recomputation of a cohort evaluation report.

Reads the JSON report written by `dwih evaluate`, recomputes the case-level
AUC, the FROC curve and the operating points from the per-case data alone,
and compares them against the values stored in the report.

All comparisons are exact. The reference implementation and this script
perform the same IEEE-754 operations in the same order, and JSON round-trips
doubles losslessly, so any difference at all is a real disagreement.

Usage: verify_report.py REPORT.json
Exit code 0 when everything matches, 1 otherwise, 2 on usage errors.
"""

import json
import sys


def mann_whitney_auc(scores, labels):
    """Average-rank Mann-Whitney AUC; tied scores earn half credit."""
    n = len(scores)
    n_pos = sum(1 for lab in labels if lab)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    order = sorted(range(n), key=lambda k: scores[k])
    rank_sum_pos = 0.0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg_rank = (i + 1 + j + 1) / 2.0
        for k in range(i, j + 1):
            if labels[order[k]]:
                rank_sum_pos += avg_rank
        i = j + 1
    u = rank_sum_pos - (n_pos * (n_pos + 1)) / 2.0
    return u / (n_pos * n_neg)


def froc_points(cases):
    """FROC sweep over the distinct peak scores plus {0, 1}, descending.

    A candidate counts at threshold t when its peak score is >= t; the
    matched flags were fixed by the full (unthresholded) greedy matching.
    Consecutive duplicate points collapse.
    """
    total_lesions = sum(c["n_lesions"] for c in cases)
    if total_lesions == 0:
        raise ValueError("FROC sensitivity undefined with zero lesions")
    n_cases = float(len(cases))
    ts = [cand["peak_score"] for c in cases for cand in c["candidates"]]
    ts.append(0.0)
    ts.append(1.0)
    ts = sorted(set(ts), reverse=True)
    points = []
    for t in ts:
        tp = 0
        fp = 0
        for c in cases:
            for cand in c["candidates"]:
                if cand["peak_score"] >= t:
                    if cand["matched"]:
                        tp += 1
                    else:
                        fp += 1
        p = (fp / n_cases, tp / float(total_lesions))
        if not points or points[-1] != p:
            points.append(p)
    return points


def tpr_at_fpp(points, fpp):
    """Sensitivity at a false-positive budget: linear interpolation on the
    polyline, top of any vertical run at the query, flat beyond the last
    point, 0 below the first."""
    if fpp < points[0][0]:
        return 0.0
    if fpp >= points[-1][0]:
        return points[-1][1]
    left = 0
    for i, p in enumerate(points):
        if p[0] <= fpp:
            left = i
        else:
            break
    ax, ay = points[left]
    bx, by = points[left + 1]
    if ax == fpp:
        return ay
    return ay + (fpp - ax) / (bx - ax) * (by - ay)


def fpp_at_tpr(points, tpr):
    """Smallest budget at which sensitivity reaches `tpr`, or None."""
    for i, p in enumerate(points):
        if p[1] >= tpr:
            if i == 0:
                return p[0]
            ax, ay = points[i - 1]
            if p[0] == ax or p[1] == ay:
                return p[0]
            return ax + (tpr - ay) / (p[1] - ay) * (p[0] - ax)
    return None


def main(argv):
    if len(argv) != 2:
        print("usage: verify_report.py REPORT.json", file=sys.stderr)
        return 2
    with open(argv[1]) as f:
        report = json.load(f)
    cases = report["cases"]
    failures = []

    auc = mann_whitney_auc(
        [c["score"] for c in cases], [c["positive"] for c in cases]
    )
    if auc != report["auc"]:
        failures.append(f"auc: report {report['auc']!r} != recomputed {auc!r}")

    points = froc_points(cases)
    reported = [(p["fpp"], p["tpr"]) for p in report["froc"]["points"]]
    if points != reported:
        failures.append(
            f"froc: report {reported!r} != recomputed {points!r}"
        )
    else:
        ops = report["operating_points"]
        for name, want in [
            ("tpr_at_fpp_075", tpr_at_fpp(points, 0.75)),
            ("tpr_at_fpp_100", tpr_at_fpp(points, 1.0)),
            ("fpp_at_tpr_065", fpp_at_tpr(points, 0.65)),
            ("fpp_at_tpr_070", fpp_at_tpr(points, 0.70)),
        ]:
            if ops[name] != want:
                failures.append(
                    f"{name}: report {ops[name]!r} != recomputed {want!r}"
                )

    # per-case bookkeeping: flags, counts and lesion tallies must agree
    for c in cases:
        tp = sum(1 for cand in c["candidates"] if cand["matched"])
        fp = len(c["candidates"]) - tp
        if tp != c["true_positives"] or fp != c["false_positives"]:
            failures.append(
                f"case {c['id']}: candidate flags disagree with tp/fp counts"
            )
        if tp + c["missed"] != c["n_lesions"]:
            failures.append(
                f"case {c['id']}: {tp} matched + {c['missed']} missed"
                f" != {c['n_lesions']} lesions"
            )

    if failures:
        for line in failures:
            print(line, file=sys.stderr)
        return 1
    print(
        f"OK: auc, {len(points)} FROC points and 4 operating points"
        f" match over {len(cases)} cases"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
