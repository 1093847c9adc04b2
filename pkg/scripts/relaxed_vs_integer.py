"""Relaxed first-stage iterates (M2R): iterate plan at a checkpoint versus the final integer plan."""
import argparse

from drrp.evaluation import evaluate_plan, evaluation_scenarios
from drrp.scenarios import GridGenParams, generate_grid_instance
from drrp.spar import SparConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid-side", type=int, default=3)
    ap.add_argument("--instances", type=int, default=10)
    ap.add_argument("--iters", type=int, default=50)
    args = ap.parse_args()

    wins = 0
    for k in range(args.instances):
        inst, model = generate_grid_instance(GridGenParams(grid_side=args.grid_side, rng_seed=k))
        cfg = SparConfig("M2R", n_max=args.iters, seed=k, checkpoints=(args.iters,), eval_seed=k)
        rep = run(inst, model, cfg)
        final = evaluate_plan(inst, model, rep.plan, scenarios=evaluation_scenarios(inst, model, 100, k)).rate_mean
        it = rep.checkpoints[args.iters].rate_mean
        wins += it > final
        print(f"instance {k} iterate {100 * it:.2f}%  final integer {100 * final:.2f}%", flush=True)
    print(f"iterate better on {wins}/{args.instances}")


if __name__ == "__main__":
    main()
