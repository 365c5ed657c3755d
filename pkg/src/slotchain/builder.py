"""Prompt rendering, coarse explanations, and training-target plumbing.

Each training record poses one slot as a question over the dialogue
history. Categorical slots become multiple-choice questions; the target
is the slot value, optionally followed by an explanation assembled from
the turns where the value changed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .chains import SlotChain, extract_chain
from .corpus import Corpus, Dialogue, Schema, SlotSchema
from .errors import (
    EmptyChainError,
    EmptyGenerationError,
    FormatError,
    TurnOutOfRangeError,
    ValidationError,
)
from .normalize import DEFAULT_POLICY, NONE_VALUE, NormalizationPolicy, normalize_value

TARGET_SEPARATOR = " | "
DEFAULT_TEMPLATE_TEXT = "Dialogue: [History] Domain: [Domain] Question: [Question] [Choices]"

_PLACEHOLDER_RE = re.compile(r"(\[History\]|\[Domain\]|\[Question\]|\[Choices\])")

EXPLANATION_KINDS = ("none", "coarse", "refined")


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt skeleton with [History], [Domain], [Question], [Choices]
    placeholders. History and Question must appear exactly once,
    Choices at most once; Domain may repeat."""

    template_text: str = DEFAULT_TEMPLATE_TEXT
    choices_section_marker: str = "Choices"

    def __post_init__(self) -> None:
        for token, lo, hi in (("[History]", 1, 1), ("[Question]", 1, 1), ("[Choices]", 0, 1)):
            n = self.template_text.count(token)
            if not lo <= n <= hi:
                raise ValidationError(
                    f"template must contain {token} "
                    f"{'exactly' if lo == hi else 'at most'} {hi} time(s), found {n}"
                )


DEFAULT_TEMPLATE = PromptTemplate()


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("template_text"), str):
        raise FormatError(f"{path}: expected an object with a 'template_text' string")
    unknown = set(data) - {"template_text", "choices_section_marker"}
    if unknown:
        raise FormatError(f"{path}: unknown template fields: {sorted(unknown)}")
    return PromptTemplate(**data)


def load_question_overrides(path: str | Path, schema: Schema) -> dict[str, str]:
    """JSON object slot_id -> question; every key must resolve."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object of slot_id -> question")
    for slot_id, question in data.items():
        if slot_id not in schema:
            raise ValidationError(f"{path}: override names unknown slot {slot_id!r}")
        if not isinstance(question, str) or not question:
            raise FormatError(f"{path}: override for {slot_id!r} must be a non-empty string")
    return dict(data)


def build_question(slot: SlotSchema, overrides: Mapping[str, str] | None = None) -> str:
    """Override verbatim when present, else the description turned into
    a question (one trailing period stripped to avoid "...?." endings)."""
    if overrides and slot.slot_id in overrides:
        return overrides[slot.slot_id]
    description = slot.description
    if description.endswith("."):
        description = description[:-1]
    return f"What's {description}?"


def _speaker_pair(system: str, user: str) -> str:
    parts = ["system:"]
    if system:
        parts.append(system)
    parts.append("user:")
    parts.append(user)
    return " ".join(parts)


def render_history(dialogue: Dialogue, query_turn: int) -> str:
    """Turns 1..query_turn as alternating "system:" / "user:" lines."""
    lines = []
    for turn in dialogue.turns[:query_turn]:
        lines.append(f"system: {turn.system_utterance}" if turn.system_utterance else "system:")
        lines.append(f"user: {turn.user_utterance}")
    return "\n".join(lines)


def _choices_block(slot: SlotSchema, marker: str, policy: NormalizationPolicy) -> str:
    values = list(slot.possible_values or ())
    if not any(normalize_value(v, policy) == NONE_VALUE for v in values):
        values.append(NONE_VALUE)
    return f"{marker}: " + ", ".join(values)


def render_prompt(
    dialogue: Dialogue,
    query_turn: int,
    slot: SlotSchema,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    overrides: Mapping[str, str] | None = None,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> str:
    """Fill the template for one (dialogue, turn, slot) sample.

    Placeholders are substituted in a single pass over the template so
    bracketed text inside utterances is never re-expanded. Categorical
    slots get a Choices block listing possible_values in schema order
    plus "none"; for non-categorical slots the block is dropped.
    """
    if not 1 <= query_turn <= dialogue.n_turns:
        raise TurnOutOfRangeError(
            f"turn {query_turn} outside dialogue {dialogue.dialogue_id!r} "
            f"with {dialogue.n_turns} turns"
        )
    text = template.template_text
    if not slot.is_categorical:
        text = text.replace(" [Choices]", "").replace("[Choices]", "")
    substitutions = {
        "[History]": render_history(dialogue, query_turn),
        "[Domain]": slot.domain,
        "[Question]": build_question(slot, overrides),
        "[Choices]": _choices_block(slot, template.choices_section_marker, policy),
    }
    parts = _PLACEHOLDER_RE.split(text)
    return "".join(substitutions.get(part, part) for part in parts).strip()


def build_coarse_explanation(chain: SlotChain, dialogue: Dialogue) -> str:
    """System/user pairs of the change turns, chronologically, joined by
    single spaces. The turns need not be consecutive."""
    if not chain.change_turns:
        raise EmptyChainError(
            f"slot {chain.slot_id!r} has no chain at turn {chain.query_turn} "
            f"of dialogue {chain.dialogue_id!r}"
        )
    if chain.dialogue_id != dialogue.dialogue_id:
        raise ValidationError(
            f"chain belongs to dialogue {chain.dialogue_id!r}, "
            f"got {dialogue.dialogue_id!r}"
        )
    pairs = []
    for turn_index in chain.change_turns:
        turn = dialogue.turns[turn_index - 1]
        pairs.append(_speaker_pair(turn.system_utterance, turn.user_utterance))
    return " ".join(pairs)


def render_target(value: str, explanation: str = "") -> str:
    """Value alone, or value + " | " + explanation. Parsing splits at
    the first separator, so the value itself must not contain one."""
    if not value:
        raise ValidationError("target value must be non-empty (use the \"none\" sentinel)")
    if not explanation:
        return value
    return f"{value}{TARGET_SEPARATOR}{explanation}"


def parse_generation(text: str) -> tuple[str, str]:
    """(value, explanation) from a model generation. No separator means
    a value-only generation; everything after the first separator is the
    explanation, both parts trimmed."""
    stripped = text.strip()
    if not stripped:
        raise EmptyGenerationError("generation is empty or whitespace-only")
    value, _, explanation = stripped.partition(TARGET_SEPARATOR)
    return value.strip(), explanation.strip()


@dataclass(frozen=True)
class ExampleMeta:
    dialogue_id: str
    query_turn: int
    slot_id: str
    step_count: int
    dialogue_turns: int
    avg_utterance_len: float


@dataclass(frozen=True)
class CoTExample:
    """One training/eval record: prompt in, value-plus-explanation out."""

    example_id: str
    input_text: str
    target_value: str
    explanation: str
    explanation_kind: str
    meta: ExampleMeta

    def __post_init__(self) -> None:
        if self.explanation_kind not in EXPLANATION_KINDS:
            raise ValidationError(
                f"explanation_kind must be one of {EXPLANATION_KINDS}, "
                f"got {self.explanation_kind!r}"
            )
        if not self.target_value:
            raise ValidationError(f"example {self.example_id!r}: empty target_value")
        has_explanation = bool(self.explanation)
        allowed_empty = self.explanation_kind == "none" or self.target_value == NONE_VALUE
        if has_explanation == allowed_empty:
            raise ValidationError(
                f"example {self.example_id!r}: explanation must be empty exactly when "
                "its kind is \"none\" or the target is \"none\""
            )

    @property
    def target_text(self) -> str:
        return render_target(self.target_value, self.explanation)


def avg_utterance_len(dialogue: Dialogue) -> float:
    """Mean whitespace-token count over all 2N utterances, the empty
    first system utterance counting as zero tokens."""
    total = 0
    for turn in dialogue.turns:
        total += len(turn.system_utterance.split()) + len(turn.user_utterance.split())
    return total / (2 * dialogue.n_turns)


def build_example(
    dialogue: Dialogue,
    query_turn: int,
    slot: SlotSchema,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    overrides: Mapping[str, str] | None = None,
    include_explanations: bool = True,
    policy: NormalizationPolicy = DEFAULT_POLICY,
    chain: SlotChain | None = None,
) -> CoTExample:
    if chain is None:
        chain = extract_chain(dialogue, slot.slot_id, query_turn, policy)
    target_value = chain.final_value
    explain = (
        include_explanations
        and chain.step_count > 0
        and normalize_value(target_value, policy) != NONE_VALUE
    )
    return CoTExample(
        example_id=f"{dialogue.dialogue_id}:{query_turn}:{slot.slot_id}",
        input_text=render_prompt(dialogue, query_turn, slot, template, overrides, policy),
        target_value=target_value,
        explanation=build_coarse_explanation(chain, dialogue) if explain else "",
        explanation_kind="coarse" if explain else "none",
        meta=ExampleMeta(
            dialogue_id=dialogue.dialogue_id,
            query_turn=query_turn,
            slot_id=slot.slot_id,
            step_count=chain.step_count,
            dialogue_turns=dialogue.n_turns,
            avg_utterance_len=avg_utterance_len(dialogue),
        ),
    )


def build_dataset(
    corpus: Corpus,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    overrides: Mapping[str, str] | None = None,
    include_explanations: bool = True,
    include_inactive: bool = False,
    split: str | None = None,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> tuple[CoTExample, ...]:
    """One example per (dialogue, turn, slot), restricted to slots with
    a non-empty chain unless include_inactive. Output order is sorted by
    (dialogue_id, query_turn, slot_id) regardless of input order."""
    slots = sorted(corpus.schema.slots, key=lambda s: s.slot_id)
    examples = []
    for dialogue in sorted(corpus.dialogues_in(split), key=lambda d: d.dialogue_id):
        for turn in dialogue.turns:
            for slot in slots:
                chain = extract_chain(dialogue, slot.slot_id, turn.index, policy)
                if not include_inactive and chain.step_count == 0:
                    continue
                examples.append(
                    build_example(
                        dialogue,
                        turn.index,
                        slot,
                        template,
                        overrides,
                        include_explanations,
                        policy,
                        chain=chain,
                    )
                )
    return tuple(examples)


# ---------------------------------------------------------------------------
# JSONL serialization


def example_to_dict(example: CoTExample) -> dict:
    return {
        "example_id": example.example_id,
        "input_text": example.input_text,
        "target_value": example.target_value,
        "explanation": example.explanation,
        "explanation_kind": example.explanation_kind,
        "meta": {
            "dialogue_id": example.meta.dialogue_id,
            "query_turn": example.meta.query_turn,
            "slot_id": example.meta.slot_id,
            "step_count": example.meta.step_count,
            "dialogue_turns": example.meta.dialogue_turns,
            "avg_utterance_len": example.meta.avg_utterance_len,
        },
    }


def examples_to_jsonl(examples: Iterable[CoTExample]) -> str:
    return "".join(
        json.dumps(example_to_dict(example), ensure_ascii=False) + "\n"
        for example in examples
    )


def write_examples(examples: Iterable[CoTExample], path: str | Path) -> None:
    Path(path).write_text(examples_to_jsonl(examples), encoding="utf-8")


def read_examples(path: str | Path) -> tuple[CoTExample, ...]:
    path = Path(path)
    examples = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {line_number}"
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: not valid JSON: {exc}") from exc
            try:
                meta = data["meta"]
                examples.append(
                    CoTExample(
                        example_id=data["example_id"],
                        input_text=data["input_text"],
                        target_value=data["target_value"],
                        explanation=data["explanation"],
                        explanation_kind=data["explanation_kind"],
                        meta=ExampleMeta(
                            dialogue_id=meta["dialogue_id"],
                            query_turn=meta["query_turn"],
                            slot_id=meta["slot_id"],
                            step_count=meta["step_count"],
                            dialogue_turns=meta["dialogue_turns"],
                            avg_utterance_len=meta["avg_utterance_len"],
                        ),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{where}: missing or malformed field: {exc}") from exc
            except ValidationError as exc:
                raise FormatError(f"{where}: {exc}") from exc
    return tuple(examples)
