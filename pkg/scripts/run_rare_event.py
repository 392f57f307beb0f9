#!/usr/bin/env python3
"""Union of eight orthant corners of a standard 3-d Gaussian, 109 proposals.

The exact probability is known, so the squared errors are measured against it.

    python3 scripts/run_rare_event.py --scale desk --seed 0
"""

from report import StudyConfig, run_study

if __name__ == "__main__":
    run_study(StudyConfig.from_argv("rare_event"))
