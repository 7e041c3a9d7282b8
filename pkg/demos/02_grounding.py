"""Grounding an instruction to tool and target regions.

Three versions of the same drawer scene: with its handle (the part prompt
succeeds on the first pass), without a handle (the part prompt fails and the
single recovery step falls back to the whole drawer), and with the drawer
missing from the observed cloud (both attempts fail and grounding reports why).
"""

from affordflow.grounding import GroundingError, GroundingRequest, ground, unique_registry
from affordflow.numerics.rng import seeded_rng
from affordflow.synth.scenes import generate_scene, scene_cloud


def attempt(title, with_handle=True, drop_target=False):
    setup = generate_scene("open", seeded_rng(4, 61), with_handle=with_handle)
    reg = unique_registry(setup.registry)
    cloud = scene_cloud(reg, setup.executor_id)
    if drop_target:
        cloud = cloud.subset(cloud.labels[:, 0] != setup.target_id)
    print(f"\n[{title}] {setup.instruction.raw_text!r}")
    req = GroundingRequest(setup.instruction.raw_text, cloud, reg, setup.executor_id)
    try:
        g = ground(req)
    except GroundingError as exc:
        print(f"  failed after attempts {exc.attempts}: {exc}")
        return
    how = "after one recovery" if g.recovery_used else "on the first pass"
    print(f"  grounded {how}; attempts {g.attempts}")
    print(f"  tool = executor, target region ({g.target_mask.prompt}) {g.target_mask.indices.size} points, "
          f"{g.queries.n_tool} + {g.queries.n_target} queries")


attempt("handle present")
attempt("handle absent", with_handle=False)
attempt("object absent", drop_target=True)
