"""
Three execution models side by side
===================================

Same DAG, same seed: plain jobs, the best clustering setting and hybrid
worker pools.  The chart lands in ``demo-out/compare-utilization.svg``.
"""

from kubewf.cli import main

main(["compare", "--n", "3200", "--seed", "1", "--out", "demo-out", "--format", "csv"])
