"""Templated task instructions over a closed action vocabulary."""

from __future__ import annotations

from dataclasses import dataclass

from .synth.motion import AFFORDANCES, O2O_KINDS

EXECUTOR = "executor"

# Nouns the language embedding knows; anything else maps to the shared OOV row.
NOUNS = (EXECUTOR, "oven", "cup", "mug", "bowl", "plate", "box", "switch", "knife", "apple",
         "rack", "block", "ball", "can")

# Surface verb used when rendering an instruction for each action.
VERB_TEXT = {"hang-on": "hang"}
# Preposition for the "VERB the TOOL <prep> the TARGET" template.
O2O_PREP = {"place": "on", "pour": "into", "hang-on": "on"}


@dataclass(frozen=True)
class Instruction:
    action: str
    tool_desc: str
    target_desc: str
    raw_text: str = ""

    def __post_init__(self):
        if self.action not in AFFORDANCES:
            raise ValueError(f"action {self.action!r} not in vocabulary {AFFORDANCES}")
        if not self.raw_text:
            object.__setattr__(self, "raw_text", render(self.action, self.tool_desc, self.target_desc))


def render(action: str, tool: str, target: str) -> str:
    verb = VERB_TEXT.get(action, action)
    if action not in O2O_KINDS:
        return f"{verb} the {target}"
    if action in O2O_PREP:
        return f"{verb} the {tool} {O2O_PREP[action]} the {target}"
    return f"{verb} the {target} with the {tool}"


def is_single_object(action: str) -> bool:
    return action not in O2O_KINDS
