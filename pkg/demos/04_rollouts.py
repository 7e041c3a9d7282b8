"""Executing flows in the kinematic simulator.

With ground-truth ("oracle") flows every kind of task should succeed: this
checks the flow-to-action path (rigid fit, gripper motion, hinge and slider
projection, success predicates) independently of any learned model. Pass a
checkpoint directory to also run the trained model closed loop and open loop
on pickup scenes with observation noise.

    python3 demos/04_rollouts.py [CHECKPOINT_DIR]
"""

import sys

from affordflow.numerics.rng import seeded_rng
from affordflow.sim import RolloutConfig, SimWorld, run_rollout, task_from_setup
from affordflow.synth.motion import AFFORDANCES
from affordflow.synth.scenes import generate_scene
from affordflow.training import load_checkpoint


def rollouts(kind, seeds, model, mode, cfg=None):
    res = []
    for seed in seeds:
        setup = generate_scene(kind, seeded_rng(seed, 53))
        res.append(run_rollout(task_from_setup(setup), SimWorld.from_setup(setup), model, mode, seed,
                               cfg or RolloutConfig()))
    return res


print("oracle flows, 5 scenes per kind:")
for kind in AFFORDANCES:
    res = rollouts(kind, range(5), None, "oracle")
    steps = [r.steps for r in res]
    print(f"  {kind:8s} {sum(r.success for r in res)}/5 succeeded, {min(steps)}-{max(steps)} steps")

if len(sys.argv) > 1:
    model, _, _ = load_checkpoint(sys.argv[1])
    noisy = RolloutConfig(obs_noise=0.003)
    for mode in ("closed_loop", "open_loop"):
        res = rollouts("pickup", range(10), model, mode, noisy)
        fails = sorted({r.failure for r in res if not r.success and r.failure})
        print(f"pickup {mode:11s} with 3 mm observation noise: {sum(r.success for r in res)}/10"
              + (f" (failures: {', '.join(fails)})" if fails else ""))
