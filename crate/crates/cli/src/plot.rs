/// Standalone matplotlib script written next to `results.csv` by `sweep`.
pub const PROFIT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Best validated profit bound against demand factor, one panel per capacity.

Usage: python3 plot_profit.py [results.csv] [profit.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    src = sys.argv[1] if len(sys.argv) > 1 else "results.csv"
    dst = sys.argv[2] if len(sys.argv) > 2 else "profit.png"
    series = defaultdict(list)
    with open(src, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["capacity"]), row["perturbation"], row["algorithm"])
            series[key].append((float(row["demand_factor"]), float(row["best_bound"])))
    capacities = sorted({k[0] for k in series})
    fig, axes = plt.subplots(1, len(capacities), figsize=(4.5 * len(capacities), 3.5), squeeze=False)
    for ax, cap in zip(axes[0], capacities):
        for (c, pert, alg), pts in sorted(series.items()):
            if c != cap:
                continue
            pts.sort()
            style = "-" if pert == "nominal" else "--"
            ax.plot([p[0] for p in pts], [p[1] for p in pts], style, marker="o", label=f"{alg} ({pert})")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("demand factor")
        ax.set_ylabel("best bound on expected profit")
        ax.set_title(f"capacity {cap}")
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(dst, dpi=150)


if __name__ == "__main__":
    main()
"#;
