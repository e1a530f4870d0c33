#!/usr/bin/env python3
"""Compare the jitted transport solver against the pure-Python fallback.

Builds the instance the metrics pipeline actually produces: a weighted
particle cloud from a sampler run against the dense enumerated target,
then times `emd` with both backends and checks the objectives agree
bit for bit.

The pure path takes minutes at the default size; pass --particles/--grid
to shrink the instance, or --skip-pure to time only the jitted solver.
"""

import argparse
import time

from ddsmc.dataset import build_gmm_table, default_gmm_spec
from ddsmc.eval import emd, empirical_distribution, enumerate_target
from ddsmc.reward import gmm_reward
from ddsmc.smc import SmcSampler


def build_instance(grid: int, particles: int, steps: int, seed: int):
    model = build_gmm_table(default_gmm_spec(grid))
    reward = gmm_reward((0.01, 1.0), (0.0, 0.0), vocab=model.vocab, grid_size=grid)
    sampler = SmcSampler(
        model,
        reward,
        family="masked",
        proposal="taylor",
        particles=particles,
        steps=steps,
        alpha=1.0,
    )
    res = sampler.run(seed)
    cloud = empirical_distribution(
        res.particles.states,
        res.particles.weights(),
        (grid, grid),
        vocab=model.vocab,
    )
    target = enumerate_target(model, reward, 1.0)
    return cloud, target


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--particles", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-pure", action="store_true")
    args = ap.parse_args()

    print(f"building instance: grid={args.grid} particles={args.particles}")
    cloud, target = build_instance(args.grid, args.particles, args.steps, args.seed)
    na = cloud.occupied()[0].shape[0]
    nb = target.occupied()[0].shape[0]
    print(f"transport size: {na} x {nb} atoms")

    # first call pays the compile cost; time the second
    emd(cloud, target)
    t0 = time.perf_counter()
    fast = emd(cloud, target)
    t_fast = time.perf_counter() - t0
    print(f"jitted:      {t_fast:10.3f} s   objective {fast!r}")

    if args.skip_pure:
        return
    t0 = time.perf_counter()
    slow = emd(cloud, target, pure=True)
    t_slow = time.perf_counter() - t0
    print(f"pure python: {t_slow:10.3f} s   objective {float(slow)!r}")
    print(f"speedup:     {t_slow / t_fast:10.1f} x")
    if fast != slow:
        raise SystemExit("objectives differ between backends")
    print("objectives bit-identical")


if __name__ == "__main__":
    main()
