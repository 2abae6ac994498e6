"""Demonstration ordering, context budgeting, and prompt rendering.

Prompts are plain completion-style strings: one block per demonstration
(filled input pattern, newline, filled output pattern), blocks joined by a
separator, then a final cue block holding the test input and the output
pattern's literal prefix so the model continues from the cue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

from .corpus import CandidatePool, Selection
from .errors import ConfigError, DataError

INPUT_PLACEHOLDER = "{input}"
OUTPUT_PLACEHOLDER = "{output}"
ORDERING_MODES = ("by_instance_score", "selection_order")
BUDGET_COUNTERS = ("whitespace_tokens", "characters")


def _require_once(pattern: str, placeholder: str, other: str, which: str) -> None:
    n = pattern.count(placeholder)
    if n != 1:
        raise ConfigError(
            f"{which} must contain {placeholder} exactly once, found {n}"
        )
    if other in pattern:
        raise ConfigError(f"{which} must not contain {other}")


def _fill(pattern: str, placeholder: str, value: str) -> str:
    # str.replace would also rewrite placeholder text arriving inside the
    # value; splitting on the single validated occurrence avoids that.
    before, after = pattern.split(placeholder, 1)
    return before + value + after


@dataclass(frozen=True)
class PromptTemplate:
    """Per-dataset patterns for demonstration blocks and the final cue."""

    input_pattern: str
    output_pattern: str
    separator: str = "\n\n"

    def __post_init__(self) -> None:
        _require_once(self.input_pattern, INPUT_PLACEHOLDER, OUTPUT_PLACEHOLDER,
                      "input_pattern")
        _require_once(self.output_pattern, OUTPUT_PLACEHOLDER, INPUT_PLACEHOLDER,
                      "output_pattern")
        if not self.separator:
            raise ConfigError("separator must be non-empty")

    def demo_block(self, input_text: str, output_text: str) -> str:
        return (
            _fill(self.input_pattern, INPUT_PLACEHOLDER, input_text)
            + "\n"
            + _fill(self.output_pattern, OUTPUT_PLACEHOLDER, output_text)
        )

    def cue_block(self, input_text: str) -> str:
        """Test-input block: filled input pattern plus the output pattern's
        literal prefix, trailing spaces stripped so the model continues
        directly after the cue."""
        prefix = self.output_pattern.split(OUTPUT_PLACEHOLDER, 1)[0]
        return (
            _fill(self.input_pattern, INPUT_PLACEHOLDER, input_text)
            + "\n"
            + prefix.rstrip(" ")
        )


def load_templates(path: Union[str, Path]) -> dict[str, PromptTemplate]:
    """Read a templates.json mapping dataset name -> template fields."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read templates file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"templates file {path} must hold an object")
    out: dict[str, PromptTemplate] = {}
    for name, fields in raw.items():
        if not isinstance(fields, dict):
            raise DataError(f"template {name!r} must be an object")
        unknown = set(fields) - {"input_pattern", "output_pattern", "separator"}
        if unknown:
            raise DataError(f"template {name!r}: unknown fields {sorted(unknown)}")
        try:
            out[name] = PromptTemplate(**fields)
        except TypeError as exc:
            raise DataError(f"template {name!r}: {exc}") from exc
    return out


@dataclass(frozen=True)
class BudgetPolicy:
    """Context budget: a unit counter plus the maximum units allowed."""

    max_units: int
    counter: Union[str, Callable[[str], int]] = "whitespace_tokens"

    def __post_init__(self) -> None:
        if self.max_units < 1:
            raise ConfigError(f"max_units must be positive, got {self.max_units}")
        if isinstance(self.counter, str) and self.counter not in BUDGET_COUNTERS:
            raise ConfigError(
                f"unknown counter {self.counter!r}; use one of {BUDGET_COUNTERS} "
                "or pass a callable"
            )

    def count(self, text: str) -> int:
        if callable(self.counter):
            return int(self.counter(text))
        if self.counter == "whitespace_tokens":
            return len(text.split())
        return len(text)

    def fits(self, text: str) -> bool:
        return self.count(text) <= self.max_units


def order_for_prompt(selection: Selection, mode: str) -> list[str]:
    """Order demo ids for prompting.

    by_instance_score sorts ascending so the strongest demo sits last,
    closest to the test input; selection_order reverses the pick order so
    the first-selected (largest-gain) demo sits last.
    """
    if mode not in ORDERING_MODES:
        raise ConfigError(f"unknown ordering mode {mode!r}; use one of {ORDERING_MODES}")
    if mode == "selection_order":
        return list(reversed(selection.demo_ids))
    if selection.instance_scores is None:
        raise DataError(
            f"selection for {selection.test_id!r} carries no instance scores; "
            "order it with selection_order instead"
        )
    pairs = sorted(
        zip(selection.demo_ids, selection.instance_scores),
        key=lambda p: p[1],
    )
    return [demo_id for demo_id, _ in pairs]


def render_prompt(
    ordered_ids: Sequence[str],
    pool: CandidatePool,
    template: PromptTemplate,
    test_input: str,
) -> str:
    """Concatenate demonstration blocks and the cue block."""
    blocks: list[str] = []
    for demo_id in ordered_ids:
        demo = pool.get(demo_id)
        if not demo.output:
            raise DataError(
                f"demonstration {demo_id!r} has empty output and cannot be prompted"
            )
        block = template.demo_block(demo.input, demo.output)
        if template.separator in block:
            raise DataError(
                f"demonstration {demo_id!r} renders a block containing the "
                "separator; escaping is not supported"
            )
        blocks.append(block)
    cue = template.cue_block(test_input)
    if template.separator in cue:
        raise DataError(
            "test input renders a cue containing the separator; "
            "escaping is not supported"
        )
    return template.separator.join(blocks + [cue])


def fit_budget(
    ordered_ids: Sequence[str],
    pool: CandidatePool,
    template: PromptTemplate,
    test_input: str,
    policy: BudgetPolicy,
) -> list[str]:
    """Drop demos from the front (least relevant first) until the rendered
    prompt fits the budget. The cue alone must fit."""
    if not policy.fits(render_prompt([], pool, template, test_input)):
        raise DataError(
            f"test input alone exceeds the budget of {policy.max_units} "
            f"{policy.counter if isinstance(policy.counter, str) else 'units'}"
        )
    kept = list(ordered_ids)
    while kept and not policy.fits(render_prompt(kept, pool, template, test_input)):
        kept.pop(0)
    return kept
