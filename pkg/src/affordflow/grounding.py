"""Rule-based task grounding over labeled scenes.

Pipeline per request: normalize the instruction, map the action to region
prompts, segment by label lookup, verify each region, and retry a failed
role once with a coarser object-level prompt. The executor role is never
segmented; its region comes from the gripper model in the registry.

Verb synonyms and action-to-part prompts live in a key=value text config::

    synonym.grab = pickup
    part.open = target:handle
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .geometry import QuerySet, ScenePointCloud
from .instruction import EXECUTOR, Instruction
from .synth.dataset import sample_queries
from .synth.motion import AFFORDANCES, O2O_KINDS
from .synth.objects import SceneObject

DEFAULT_CONFIG = """\
# verb synonyms: synonym.<surface verb> = <action>
synonym.pick up = pickup
synonym.pick = pickup
synonym.grab = pickup
synonym.lift = pickup
synonym.put = place
synonym.put down = place
synonym.shut = close
synonym.hang = hang-on
synonym.slice = cut
synonym.shove = push
synonym.drag = pull
synonym.tilt = pour
synonym.push down = press
# part prompts: part.<action> = <role>:<part>
part.open = target:handle
part.close = target:handle
part.pour = target:rim
part.press = target:button
# verification thresholds
verify.n_min = 8
verify.kappa = 1.2
"""


class TaskUnderstandingError(ValueError):
    """Unrecoverable: the instruction cannot be parsed against the vocabulary."""


class GroundingError(RuntimeError):
    """Recoverable stage failed twice for one role."""

    def __init__(self, msg: str, reasons: list, attempts: dict):
        super().__init__(msg)
        self.reasons = reasons
        self.attempts = attempts


@dataclass
class GroundingConfig:
    synonyms: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)  # action -> (role, part)
    n_min: int = 8
    kappa: float = 1.2

    @classmethod
    def parse(cls, text: str, base: "GroundingConfig | None" = None) -> "GroundingConfig":
        cfg = cls(dict(base.synonyms), dict(base.parts), base.n_min, base.kappa) if base else cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected key = value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key.startswith("synonym."):
                if val not in AFFORDANCES:
                    raise ValueError(f"line {n}: synonym maps to unknown action {val!r}")
                cfg.synonyms[key[8:].strip().lower()] = val
            elif key.startswith("part."):
                role, _, part = val.partition(":")
                if role not in ("tool", "target") or not part:
                    raise ValueError(f"line {n}: part prompt must be tool:<part> or target:<part>")
                cfg.parts[key[5:].strip()] = (role, part.strip())
            elif key == "verify.n_min":
                cfg.n_min = int(val)
            elif key == "verify.kappa":
                cfg.kappa = float(val)
            else:
                raise ValueError(f"line {n}: unknown key {key!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "GroundingConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"), base=default_config())


def default_config() -> GroundingConfig:
    return GroundingConfig.parse(DEFAULT_CONFIG)


# ---------------------------------------------------------------- requests


@dataclass
class GroundingRequest:
    text: str
    scene: ScenePointCloud
    registry: list  # SceneObject per label id; None for absent ids
    executor_id: int = 1

    def __post_init__(self):
        names = [o.name for o in self.registry if o is not None and o.name not in ("table", EXECUTOR)]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ValueError(f"registry names must be unique, repeated: {sorted(dup)}")

    def object_id(self, name: str) -> int | None:
        for i, o in enumerate(self.registry):
            if o is not None and o.name == name:
                return i
        return None


def unique_registry(registry: list) -> list:
    """Copy of ``registry`` with repeated names suffixed (``block``, ``block_2``)."""
    seen: dict = {}
    out = []
    for o in registry:
        if o is None:
            out.append(None)
            continue
        n = seen.get(o.name, 0) + 1
        seen[o.name] = n
        if n > 1:
            o = o.copy()
            o.name = f"{o.name}_{n}"
        out.append(o)
    return out


# ---------------------------------------------------------------- stages


def _nearest(word: str, vocab) -> list:
    return difflib.get_close_matches(word, sorted(vocab), n=3, cutoff=0.5)


_ARTICLE = r"(?:the |a |an )?"


def understand_task(raw: str, registry: list | None = None,
                    cfg: GroundingConfig | None = None) -> Instruction:
    """Parse ``VERB the TARGET``, ``VERB the TARGET with the TOOL`` or
    ``VERB the TOOL into|on the TARGET`` into a normalized instruction."""
    cfg = cfg or default_config()
    text = " ".join(raw.lower().strip().rstrip(".").split())
    if not text:
        raise TaskUnderstandingError("empty instruction")
    verbs = {a: a for a in AFFORDANCES} | {"hang": "hang-on"} | cfg.synonyms
    # longest surface verb first so "pick up" wins over "pick"
    action, rest = None, ""
    for surface in sorted(verbs, key=len, reverse=True):
        if text == surface or text.startswith(surface + " "):
            action, rest = verbs[surface], text[len(surface):].strip()
            break
    if action is None:
        first = text.split()[0]
        raise TaskUnderstandingError(f"unknown verb {first!r}; nearest: {_nearest(first, verbs)}")

    m = re.fullmatch(rf"{_ARTICLE}(.+?) (?:into|onto|on|in) {_ARTICLE}(.+)", rest)
    if m and action in O2O_KINDS:
        tool, target = m.group(1), m.group(2)
    else:
        m = re.fullmatch(rf"{_ARTICLE}(.+?) (?:with|using) {_ARTICLE}(.+)", rest)
        if m:
            target, tool = m.group(1), m.group(2)
        else:
            target, tool = re.sub(rf"^{_ARTICLE}", "", rest), EXECUTOR
    if not target:
        raise TaskUnderstandingError(f"no target object in {raw!r}")
    if action in O2O_KINDS and tool == EXECUTOR:
        raise TaskUnderstandingError(f"{action!r} needs a tool object, got {raw!r}")
    if registry is not None:
        names = {o.name for o in registry if o is not None}
        for noun in (tool, target):
            if noun != EXECUTOR and noun not in names:
                raise TaskUnderstandingError(f"unknown object {noun!r}; nearest: {_nearest(noun, names)}")
    return Instruction(action, tool, target, raw)


@dataclass(frozen=True)
class Prompt:
    obj: str
    part: str = "whole"

    def __str__(self):
        return f"{self.obj}/{self.part}"


@dataclass
class RegionPrompts:
    tool: Prompt
    target: Prompt
    tool_fallback: Prompt
    target_fallback: Prompt


def parse_region_prompts(action: str, tool: str, target: str,
                         cfg: GroundingConfig | None = None) -> RegionPrompts:
    cfg = cfg or default_config()
    tp, gp = Prompt(tool), Prompt(target)
    if action in cfg.parts:
        role, part = cfg.parts[action]
        if role == "tool":
            tp = Prompt(tool, part)
        else:
            gp = Prompt(target, part)
    return RegionPrompts(tp, gp, Prompt(tool), Prompt(target))


@dataclass
class RegionMask:
    indices: np.ndarray
    role: str
    prompt: Prompt
    provenance: str = "first-pass"

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("mask indices must be unique")


def segment(prompt: Prompt, scene: ScenePointCloud, registry: list, role: str = "target",
            provenance: str = "first-pass") -> RegionMask:
    """Every scene point whose (object, part) label matches the prompt."""
    oid = next((i for i, o in enumerate(registry) if o is not None and o.name == prompt.obj), None)
    if oid is None:
        return RegionMask(np.zeros(0, np.int64), role, prompt, provenance)
    sel = scene.labels[:, 0] == oid
    if prompt.part != "whole":
        parts = registry[oid].parts
        if prompt.part not in parts:
            return RegionMask(np.zeros(0, np.int64), role, prompt, provenance)
        sel &= scene.labels[:, 1] == parts.index(prompt.part)
    return RegionMask(np.flatnonzero(sel), role, prompt, provenance)


@dataclass
class Verdict:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def diameter(points: np.ndarray) -> float:
    """Largest pairwise distance, via hull vertices when the set is large."""
    points = np.asarray(points)
    if len(points) < 2:
        return 0.0
    if len(points) > 64:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass  # flat or degenerate set: fall back to all pairs
    return float(pdist(points).max())


def verify(mask: RegionMask, action: str, scene: ScenePointCloud, registry: list,
           cfg: GroundingConfig | None = None) -> Verdict:
    cfg = cfg or default_config()
    if len(mask.indices) == 0:
        return Verdict(False, "empty")
    if len(mask.indices) < cfg.n_min:
        return Verdict(False, f"too-small ({len(mask.indices)} < {cfg.n_min})")
    labels = scene.labels[mask.indices]
    oid = int(labels[0, 0])
    obj: SceneObject = registry[oid]
    pts = scene.points[mask.indices]
    full = scene.points[scene.labels[:, 0] == oid]
    if diameter(pts) > cfg.kappa * diameter(full) + 1e-12:
        return Verdict(False, "not-compact")

    if action in ("open", "close") and mask.role == "target":
        if obj.hinge is None:
            return Verdict(False, "no-hinge")
        moving = [obj.parts.index(p) for p in obj.hinge.moving_parts]
        on_moving = np.isin(labels[:, 1], moving)
        if on_moving.sum() < cfg.n_min:
            return Verdict(False, "off-moving-part")
        axis = obj.pose.rotation @ obj.hinge.axis
        pivot = obj.pose.rotation @ obj.hinge.pivot + obj.pose.translation
        dist = _axis_distance(pts[on_moving], axis, pivot)
        door = scene.points[(scene.labels[:, 0] == oid) & np.isin(scene.labels[:, 1], moving)]
        reach = _axis_distance(door, axis, pivot).max()
        if dist.mean() < 0.25 * reach:
            return Verdict(False, "hinge-side")
    if action == "pickup" and mask.role == "target" and not obj.graspable:
        return Verdict(False, "not-graspable")
    if action in O2O_KINDS and mask.role == "tool" and not obj.graspable:
        return Verdict(False, "not-graspable")
    return Verdict(True)


def _axis_distance(points, axis, pivot) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    d = points - pivot
    return np.linalg.norm(d - np.outer(d @ a, a), axis=1)


# ---------------------------------------------------------------- driver


@dataclass
class GroundingResult:
    instruction: Instruction
    tool_mask: RegionMask | None  # None when the tool is the executor
    target_mask: RegionMask
    queries: QuerySet
    tool_index: np.ndarray  # into the tool region (executor points or scene points)
    target_index: np.ndarray
    report: dict
    recovery_used: bool
    attempts: dict


def executor_points(registry: list, executor_id: int) -> np.ndarray:
    ex = registry[executor_id]
    return np.concatenate([ex.part_points(p) for p in ex.parts])


def ground(request: GroundingRequest, cfg: GroundingConfig | None = None, n_queries: int = 128,
           rng: np.random.Generator | None = None) -> GroundingResult:
    """Understand, prompt, segment and verify both roles; retry a failed role
    once with its object-level fallback prompt."""
    cfg = cfg or default_config()
    instr = understand_task(request.text, request.registry, cfg)
    prompts = parse_region_prompts(instr.action, instr.tool_desc, instr.target_desc, cfg)
    attempts = {"tool": 0, "target": 0}
    report: dict = {}
    recovered = False
    masks = {}
    roles = [("target", prompts.target, prompts.target_fallback)]
    if instr.tool_desc != EXECUTOR:
        roles.insert(0, ("tool", prompts.tool, prompts.tool_fallback))
    for role, first, fallback in roles:
        reasons = []
        for provenance, prompt in (("first-pass", first), ("recovered", fallback)):
            attempts[role] += 1
            mask = segment(prompt, request.scene, request.registry, role, provenance)
            verdict = verify(mask, instr.action, request.scene, request.registry, cfg)
            reasons.append(f"{prompt}: {verdict.reason or 'ok'}")
            if verdict:
                masks[role] = mask
                recovered |= provenance == "recovered"
                break
        report[role] = reasons
        if role not in masks:
            raise GroundingError(f"{role} grounding failed twice: {reasons}", reasons, attempts)

    if instr.tool_desc == EXECUTOR:
        tool_pts = executor_points(request.registry, request.executor_id)
    else:
        tool_pts = request.scene.points[masks["tool"].indices]
    target_pts = request.scene.points[masks["target"].indices]
    qs = sample_queries(tool_pts, target_pts, n_queries, rng=rng)
    return GroundingResult(instr, masks.get("tool"), masks["target"], qs.queries, qs.tool_index,
                           qs.target_index, report, recovered, attempts)
