#!/usr/bin/env python3
"""Singular integrand ||x - x0||^-2.4 under a correlated 5-d Gaussian, 51 proposals.

    python3 scripts/run_singular.py --scale desk --seed 0
"""

from report import StudyConfig, run_study

if __name__ == "__main__":
    run_study(StudyConfig.from_argv("singular"))
