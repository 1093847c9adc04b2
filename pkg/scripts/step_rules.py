"""Step-size sensitivity of M2I on the 9-station grid."""
import argparse

import numpy as np

from drrp.evaluation import evaluate_plan, evaluation_scenarios
from drrp.model import RebalancePlan
from drrp.scenarios import GridGenParams, generate_grid_instance
from drrp.spar import SparConfig, run
from drrp.vfa import StepSizeRule

RULES = ("harmonic_20_40", "constant:0.5", "capped_harmonic")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=3)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--rules", nargs="+", default=list(RULES))
    args = ap.parse_args()

    gains = {r: [] for r in args.rules}
    for k in range(args.instances):
        inst, model = generate_grid_instance(GridGenParams(grid_side=3, rng_seed=k))
        scen = evaluation_scenarios(inst, model, 100, k)
        base = evaluate_plan(inst, model, RebalancePlan(), scenarios=scen).rate_mean
        for rule in args.rules:
            rep = run(inst, model, SparConfig("M2I", n_max=args.iters, seed=k, step_rule=StepSizeRule.parse(rule)))
            gains[rule].append(100 * (evaluate_plan(inst, model, rep.plan, scenarios=scen).rate_mean - base))
            print(f"instance {k} {rule:>16} gain {gains[rule][-1]:+.2f} pp", flush=True)
    for rule, g in gains.items():
        print(f"{rule:>16} mean {np.mean(g):+.2f} pp over {len(g)}")


if __name__ == "__main__":
    main()
