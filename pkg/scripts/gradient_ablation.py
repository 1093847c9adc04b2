"""Compare the slope-update options (gradient source x update rule) on small grids.

Each combination runs M2I on the same instances and scenario streams; the
output is the mean service-rate gain over the no-action plan.
"""
import argparse
import itertools

import numpy as np

from drrp.evaluation import evaluate_plan, evaluation_scenarios
from drrp.model import RebalancePlan
from drrp.scenarios import GridGenParams, generate_grid_instance
from drrp.spar import GRADIENTS, UPDATES, SparConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-side", type=int, default=3)
    ap.add_argument("--instances", type=int, default=3)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--eval-scenarios", type=int, default=100)
    args = ap.parse_args()

    gains = {combo: [] for combo in itertools.product(GRADIENTS, UPDATES)}
    for k in range(args.instances):
        inst, model = generate_grid_instance(GridGenParams(grid_side=args.grid_side, rng_seed=k))
        scen = evaluation_scenarios(inst, model, args.eval_scenarios, k)
        base = evaluate_plan(inst, model, RebalancePlan(), scenarios=scen).rate_mean
        for gradient, update in gains:
            rep = run(inst, model, SparConfig("M2I", n_max=args.iters, seed=k, gradient=gradient, update=update))
            rate = evaluate_plan(inst, model, rep.plan, scenarios=scen).rate_mean
            gains[(gradient, update)].append(100 * (rate - base))
            print(f"instance {k} {gradient:>10} {update:>9} gain {100 * (rate - base):+.2f} pp", flush=True)
    for (gradient, update), g in gains.items():
        print(f"{gradient:>10} {update:>9} mean {np.mean(g):+.2f} pp")


if __name__ == "__main__":
    main()
