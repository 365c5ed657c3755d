"""Slot reasoning chains: the turns at which a slot's value changed.

A chain collects, in order, every turn up to a query turn where the
normalized value of one slot differs from the turn before. Its length is
the number of reasoning steps needed to justify the value at the query
turn; dropping a previously set slot counts as a step to "none".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .corpus import Corpus, Dialogue, Schema
from .errors import TurnOutOfRangeError, UnknownSlotError
from .normalize import DEFAULT_POLICY, NONE_VALUE, NormalizationPolicy, normalize_value


@dataclass(frozen=True)
class SlotChain:
    """Change history of one slot through ``query_turn``.

    ``change_turns`` and ``values`` run in parallel: the value as
    annotated at each change turn, with the sentinel "none" standing in
    when the slot was dropped there.
    """

    dialogue_id: str
    slot_id: str
    query_turn: int
    change_turns: tuple[int, ...]
    values: tuple[str, ...]

    @property
    def step_count(self) -> int:
        return len(self.change_turns)

    @property
    def is_multi_step(self) -> bool:
        return self.step_count >= 2

    @property
    def final_value(self) -> str:
        """Value in force at the query turn; "none" when never set."""
        return self.values[-1] if self.values else NONE_VALUE


def extract_chain(
    dialogue: Dialogue,
    slot_id: str,
    query_turn: int,
    policy: NormalizationPolicy = DEFAULT_POLICY,
    schema: Schema | None = None,
) -> SlotChain:
    """Chain for one slot through ``query_turn`` (1-based, inclusive).

    The chain is empty exactly when the slot never held a value in the
    prefix. Values that only restate the previous one (up to
    normalization) add no step. Chains over growing query turns extend
    each other: the chain at turn t is a prefix of the chain at t+1.
    """
    if schema is not None and slot_id not in schema:
        raise UnknownSlotError(f"slot {slot_id!r} not in schema")
    if not 1 <= query_turn <= dialogue.n_turns:
        raise TurnOutOfRangeError(
            f"turn {query_turn} outside dialogue {dialogue.dialogue_id!r} "
            f"with {dialogue.n_turns} turns"
        )
    change_turns: list[int] = []
    values: list[str] = []
    previous = NONE_VALUE
    for turn in dialogue.turns[:query_turn]:
        raw = turn.gold_state.get(slot_id)
        norm = normalize_value(raw, policy) if raw is not None else NONE_VALUE
        if norm != previous:
            change_turns.append(turn.index)
            values.append(raw if raw is not None else NONE_VALUE)
            previous = norm
    return SlotChain(
        dialogue_id=dialogue.dialogue_id,
        slot_id=slot_id,
        query_turn=query_turn,
        change_turns=tuple(change_turns),
        values=tuple(values),
    )


def reasoning_steps(chain: SlotChain) -> int:
    """Number of changes behind the chain's final value; 0 when empty."""
    return chain.step_count


def _slot_ids_in(dialogue: Dialogue) -> set[str]:
    return {slot_id for turn in dialogue.turns for slot_id in turn.gold_state}


def _change_counts_by_turn(
    dialogue: Dialogue, policy: NormalizationPolicy
) -> list[dict[str, int]]:
    """Per turn, change counts of every slot changed so far. One pass
    over the dialogue instead of a chain extraction per (turn, slot)."""
    previous: dict[str, str] = {}
    counts: dict[str, int] = {}
    out: list[dict[str, int]] = []
    slot_ids = _slot_ids_in(dialogue)
    for turn in dialogue.turns:
        for slot_id in slot_ids:
            raw = turn.gold_state.get(slot_id)
            norm = normalize_value(raw, policy) if raw is not None else NONE_VALUE
            if norm != previous.get(slot_id, NONE_VALUE):
                counts[slot_id] = counts.get(slot_id, 0) + 1
                previous[slot_id] = norm
        out.append(dict(counts))
    return out


def max_step_at_turns(
    dialogue: Dialogue, policy: NormalizationPolicy = DEFAULT_POLICY
) -> tuple[int, ...]:
    """For each turn, the largest chain length over all slots; 0 until
    the first slot is filled. Used to bucket turns by reasoning depth."""
    return tuple(
        max(counts.values(), default=0) for counts in _change_counts_by_turn(dialogue, policy)
    )


@dataclass(frozen=True)
class StepHistogram:
    """Sample counts keyed by step count. A sample is a (dialogue, turn,
    slot) triple whose chain at that turn is non-empty."""

    counts: Mapping[int, int]

    @property
    def total_active(self) -> int:
        return sum(self.counts.values())

    @property
    def multi_step_fraction(self) -> float:
        """Share of samples needing two or more steps."""
        total = self.total_active
        if total == 0:
            return 0.0
        multi = sum(n for steps, n in self.counts.items() if steps >= 2)
        return multi / total

    def to_dict(self) -> dict[str, int]:
        return {str(steps): self.counts[steps] for steps in sorted(self.counts)}


def step_histogram(
    corpus: Corpus,
    split: str | None = None,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> StepHistogram:
    """Histogram of chain lengths over every (dialogue, turn, slot) with
    a non-empty chain, for one split or the whole corpus."""
    counts: dict[int, int] = {}
    for dialogue in corpus.dialogues_in(split):
        for per_slot in _change_counts_by_turn(dialogue, policy):
            for count in per_slot.values():
                counts[count] = counts.get(count, 0) + 1
    return StepHistogram(counts=counts)
