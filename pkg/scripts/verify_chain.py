"""Check the operator inequalities that bracket the measured data.

Builds a scenario, generates its data matrix, and tests the ordering of the
local maps: growing excluded regions sit above the data, growing frozen
regions below, with one line per eigenvalue test.
"""

import argparse
import dataclasses
import os
import sys

from crackfind import harness

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, "..", "configs", "mixed_chain_32.json")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=DEFAULT_CONFIG, help="scenario JSON")
    args = ap.parse_args()

    scenario = harness.load_scenario(args.config)
    scenario = dataclasses.replace(scenario, methods=("chain",))
    report = harness.run_scenario(scenario)

    chain = report.results["chain"]
    for t in chain["tests"]:
        print(
            "%-28s %s  min_eig % .3e  tau %.3e"
            % (t["test"], "pass" if t["passed"] else "FAIL", t["min_eig"], t["tau"])
        )
    print("chain:", "pass" if chain["passed"] else "FAIL")
    return 0 if chain["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
