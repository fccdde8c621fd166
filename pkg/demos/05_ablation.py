"""Leakage and confusion under the four guidance configurations.

Runs the shipped 50-prompt synthesis suite (a few minutes with all four
configurations; pass a number to use only the first n prompts).

    python3 demos/05_ablation.py [n]
"""
import sys

from garmentdiff.evalkit import SuiteSpec, run_suite, shipped_synthesis_suite

n = int(sys.argv[1]) if len(sys.argv) > 1 else 50
spec = SuiteSpec(shipped_synthesis_suite()[:n])
reports = run_suite(spec)
print(f"{'configuration':<10} {'leakage':>8} {'confusion':>10}")
for name, r in reports.items():
    print(f"{name:<10} {r.leakage_rate:>8.3f} {r.confusion_rate:>10.3f}")
