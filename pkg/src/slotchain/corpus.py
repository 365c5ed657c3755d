"""Canonical data model for schema-guided dialogue corpora.

One internal contract covers three source datasets with different
layouts: files are converted on ingestion and every downstream stage
works against the types below. All types are immutable after load and
safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

from .errors import FormatError, ValidationError
from .normalize import DEFAULT_POLICY, normalize_value

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SlotSchema:
    """One trackable slot: domain, name, description and, for
    categorical slots, the closed value set."""

    slot_id: str
    domain: str
    name: str
    description: str
    possible_values: tuple[str, ...] | None = None

    @property
    def is_categorical(self) -> bool:
        return bool(self.possible_values)


@dataclass(frozen=True)
class Schema:
    slots: tuple[SlotSchema, ...]

    @cached_property
    def by_id(self) -> dict[str, SlotSchema]:
        return {slot.slot_id: slot for slot in self.slots}

    @property
    def domains(self) -> set[str]:
        return {slot.domain for slot in self.slots}

    def __contains__(self, slot_id: str) -> bool:
        return slot_id in self.by_id


@dataclass(frozen=True)
class TurnPair:
    """One system/user exchange plus the cumulative gold state after it.

    ``index`` is 1-based. The system utterance may be empty on the first
    turn only (dialogues opened by the user).
    """

    index: int
    system_utterance: str
    user_utterance: str
    gold_state: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    turns: tuple[TurnPair, ...]
    split: str

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def state_at(self, turn_index: int) -> Mapping[str, str]:
        return self.turns[turn_index - 1].gold_state


@dataclass(frozen=True)
class Corpus:
    schema: Schema
    dialogues: tuple[Dialogue, ...]
    name: str = ""

    def split_counts(self) -> dict[str, int]:
        counts = {split: 0 for split in SPLITS}
        for dialogue in self.dialogues:
            counts[dialogue.split] += 1
        return counts

    def dialogues_in(self, split: str | None) -> tuple[Dialogue, ...]:
        if split is None:
            return self.dialogues
        return tuple(d for d in self.dialogues if d.split == split)


# ---------------------------------------------------------------------------
# validation


def validate_schema(schema: Schema) -> None:
    seen: set[str] = set()
    for slot in schema.slots:
        if slot.slot_id != f"{slot.domain}-{slot.name}":
            raise ValidationError(
                f"slot_id {slot.slot_id!r} does not equal domain + '-' + name "
                f"({slot.domain!r}, {slot.name!r})"
            )
        if slot.slot_id in seen:
            raise ValidationError(f"duplicate slot_id {slot.slot_id!r}")
        seen.add(slot.slot_id)
        if slot.possible_values is not None:
            if not slot.possible_values:
                raise ValidationError(
                    f"slot {slot.slot_id!r}: possible_values present but empty"
                )
            normalized = [normalize_value(v, DEFAULT_POLICY) for v in slot.possible_values]
            if len(set(normalized)) != len(normalized):
                raise ValidationError(
                    f"slot {slot.slot_id!r}: possible_values contain duplicates "
                    "after normalization"
                )


def validate_dialogue(dialogue: Dialogue, schema: Schema) -> None:
    if dialogue.split not in SPLITS:
        raise ValidationError(
            f"dialogue {dialogue.dialogue_id!r}: unknown split {dialogue.split!r}"
        )
    for position, turn in enumerate(dialogue.turns, start=1):
        where = f"dialogue {dialogue.dialogue_id!r} turn {position}"
        if turn.index != position:
            raise ValidationError(
                f"{where}: expected index {position}, found {turn.index}"
            )
        if not turn.user_utterance:
            raise ValidationError(f"{where}: empty user utterance")
        if not turn.system_utterance and position != 1:
            raise ValidationError(
                f"{where}: empty system utterance only permitted on the first turn"
            )
        for slot_id, value in turn.gold_state.items():
            if slot_id not in schema:
                raise ValidationError(f"{where}: unknown slot_id {slot_id!r}")
            if not value:
                raise ValidationError(f"{where}: empty value for slot {slot_id!r}")


def validate_corpus(corpus: Corpus) -> None:
    validate_schema(corpus.schema)
    seen: set[str] = set()
    for dialogue in corpus.dialogues:
        if dialogue.dialogue_id in seen:
            raise ValidationError(f"duplicate dialogue_id {dialogue.dialogue_id!r}")
        seen.add(dialogue.dialogue_id)
        validate_dialogue(dialogue, corpus.schema)


# ---------------------------------------------------------------------------
# canonical schema files: JSON array of
# {slot_id, domain, name, description, possible_values?}


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{path}: expected a JSON array of slot objects")
    slots = []
    for i, entry in enumerate(raw):
        where = f"{path}: slot record {i}"
        if not isinstance(entry, dict):
            raise FormatError(f"{where}: expected an object")
        try:
            possible = entry.get("possible_values")
            slots.append(
                SlotSchema(
                    slot_id=_req_str(entry, "slot_id", where),
                    domain=_req_str(entry, "domain", where),
                    name=_req_str(entry, "name", where),
                    description=_req_str(entry, "description", where),
                    possible_values=tuple(possible) if possible is not None else None,
                )
            )
        except (TypeError, KeyError) as exc:
            raise FormatError(f"{where}: {exc}") from exc
    schema = Schema(slots=tuple(slots))
    validate_schema(schema)
    return schema


def save_schema(schema: Schema, path: str | Path) -> None:
    records = []
    for slot in schema.slots:
        record = {
            "slot_id": slot.slot_id,
            "domain": slot.domain,
            "name": slot.name,
            "description": slot.description,
        }
        if slot.possible_values is not None:
            record["possible_values"] = list(slot.possible_values)
        records.append(record)
    _write_json(records, path)


def _req_str(entry: dict, key: str, where: str) -> str:
    value = entry.get(key)
    if not isinstance(value, str):
        raise FormatError(f"{where}: field {key!r} missing or not a string")
    return value


def _write_json(payload, path: str | Path) -> None:
    path = Path(path)
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=False)
    path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# canonical dialogue files: JSON array of
# {dialogue_id, split, turns: [{index, system, user, state: {slot_id: value}}]}


def load_corpus(
    dialogue_paths: Iterable[str | Path],
    schema: Schema,
    exclude_domains: set[str] = frozenset(),
    name: str = "",
) -> Corpus:
    """Load canonical dialogue files against a schema.

    Slots of excluded domains are removed from gold states; dialogues
    whose annotations all belong to excluded domains are dropped.
    """
    dialogues: list[Dialogue] = []
    for path in dialogue_paths:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, list):
            raise FormatError(f"{path}: expected a JSON array of dialogues")
        for i, entry in enumerate(raw):
            where = f"{path}: dialogue record {i}"
            if not isinstance(entry, dict):
                raise FormatError(f"{where}: expected an object")
            turns = entry.get("turns")
            if not isinstance(turns, list):
                raise FormatError(f"{where}: field 'turns' missing or not an array")
            parsed_turns = []
            for j, turn in enumerate(turns):
                turn_where = f"{where} turn {j}"
                if not isinstance(turn, dict):
                    raise FormatError(f"{turn_where}: expected an object")
                state = turn.get("state", {})
                if not isinstance(state, dict):
                    raise FormatError(f"{turn_where}: field 'state' not an object")
                index = turn.get("index")
                if not isinstance(index, int):
                    raise FormatError(f"{turn_where}: field 'index' missing or not an integer")
                parsed_turns.append(
                    TurnPair(
                        index=index,
                        system_utterance=_req_str(turn, "system", turn_where)
                        if "system" in turn
                        else "",
                        user_utterance=_req_str(turn, "user", turn_where),
                        gold_state=dict(state),
                    )
                )
            dialogues.append(
                Dialogue(
                    dialogue_id=_req_str(entry, "dialogue_id", where),
                    turns=tuple(parsed_turns),
                    split=_req_str(entry, "split", where),
                )
            )
    corpus = Corpus(schema=schema, dialogues=tuple(dialogues), name=name)
    corpus = filter_excluded_domains(corpus, exclude_domains)
    validate_corpus(corpus)
    return corpus


def filter_excluded_domains(corpus: Corpus, exclude_domains: set[str]) -> Corpus:
    """Drop excluded-domain slots from gold states; drop dialogues that
    annotated nothing outside the excluded domains."""
    if not exclude_domains:
        return corpus

    def slot_domain(slot_id: str) -> str:
        slot = corpus.schema.by_id.get(slot_id)
        if slot is not None:
            return slot.domain
        return slot_id.split("-", 1)[0]

    kept: list[Dialogue] = []
    for dialogue in corpus.dialogues:
        annotated = {slot_domain(s) for turn in dialogue.turns for s in turn.gold_state}
        if annotated and annotated <= exclude_domains:
            continue
        new_turns = tuple(
            TurnPair(
                index=turn.index,
                system_utterance=turn.system_utterance,
                user_utterance=turn.user_utterance,
                gold_state={
                    s: v
                    for s, v in turn.gold_state.items()
                    if slot_domain(s) not in exclude_domains
                },
            )
            for turn in dialogue.turns
        )
        kept.append(
            Dialogue(dialogue_id=dialogue.dialogue_id, turns=new_turns, split=dialogue.split)
        )
    return Corpus(schema=corpus.schema, dialogues=tuple(kept), name=corpus.name)


def corpus_to_json(corpus: Corpus) -> str:
    """The canonical dialogue-file text for a corpus.

    State keys are sorted so repeated renders are byte-stable. The schema
    is not embedded; keep it alongside via save_schema.
    """
    records = []
    for dialogue in corpus.dialogues:
        records.append(
            {
                "dialogue_id": dialogue.dialogue_id,
                "split": dialogue.split,
                "turns": [
                    {
                        "index": turn.index,
                        "system": turn.system_utterance,
                        "user": turn.user_utterance,
                        "state": {k: turn.gold_state[k] for k in sorted(turn.gold_state)},
                    }
                    for turn in dialogue.turns
                ],
            }
        )
    return json.dumps(records, ensure_ascii=False, indent=2, sort_keys=False) + "\n"


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the dialogues as one canonical JSON file."""
    Path(path).write_text(corpus_to_json(corpus), encoding="utf-8")


def merge_corpora(corpora: Iterable[Corpus], name: str = "") -> Corpus:
    """Concatenate corpora sharing one schema; dialogue ids must not collide."""
    corpora = list(corpora)
    if not corpora:
        raise ValidationError("cannot merge zero corpora")
    schema = corpora[0].schema
    dialogues: list[Dialogue] = []
    for corpus in corpora:
        if corpus.schema != schema:
            raise ValidationError("cannot merge corpora with different schemas")
        dialogues.extend(corpus.dialogues)
    merged = Corpus(schema=schema, dialogues=tuple(dialogues), name=name)
    validate_corpus(merged)
    return merged


# ---------------------------------------------------------------------------
# legacy ingestion


def infer_split(path: str | Path) -> str | None:
    stem = Path(path).stem.lower()
    for token in ("validate", "valid", "dev", "val"):
        if token in stem:
            return "dev"
    if "test" in stem:
        return "test"
    if "train" in stem:
        return "train"
    return None


def ingest_legacy(
    path: str | Path,
    style: str,
    schema: Schema,
    split: str | None = None,
) -> Corpus:
    """Convert a legacy-format file into a canonical Corpus.

    Styles:
      woz_belief  -- wizard-of-oz belief annotations: per-turn cumulative
                     belief lists of {"slots": [[name, value]], "act": ...}.
      m2m_flat    -- simulated dialogues: per-turn cumulative
                     dialogue_state lists of {"slot": ..., "value": ...}.
      sgd_state   -- schema-guided releases: USER turns carry frames with
                     state.slot_values (first variant wins).

    The split is inferred from the filename when not given.
    """
    path = Path(path)
    if split is None:
        split = infer_split(path)
        if split is None:
            raise FormatError(f"{path}: cannot infer split from filename; pass one")
    if style == "woz_belief":
        corpus = _ingest_woz_belief(path, schema, split)
    elif style == "m2m_flat":
        corpus = _ingest_m2m_flat(path, schema, split)
    elif style == "sgd_state":
        corpus = _ingest_sgd_state(path, schema, split)
    else:
        raise FormatError(f"unknown legacy style {style!r}")
    validate_corpus(corpus)
    return corpus


def _load_json_array(path: Path) -> list:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{path}: expected a JSON array")
    return raw


def _slot_name_index(schema: Schema, domain: str | None = None) -> dict[str, str | None]:
    """Map bare slot names (space/underscore tolerant) to slot ids.

    A name claimed by two slots maps to None so lookups can reject it as
    ambiguous instead of silently picking one.
    """
    index: dict[str, str | None] = {}
    for slot in schema.slots:
        if domain is not None and slot.domain != domain:
            continue
        for key in {slot.name, slot.name.replace("_", " "), slot.name.replace(" ", "_"),
                    slot.name.replace(" ", "")}:
            key = key.lower()
            if key in index and index[key] != slot.slot_id:
                index[key] = None
            else:
                index[key] = slot.slot_id
    return index


def _resolve_slot_name(
    index: dict[str, str | None], raw_name: object, where: str
) -> str:
    key = str(raw_name).lower()
    if key not in index:
        raise FormatError(f"{where}: names unknown slot {raw_name!r}")
    slot_id = index[key]
    if slot_id is None:
        raise FormatError(f"{where}: slot name {raw_name!r} is ambiguous in this schema")
    return slot_id


def _ingest_woz_belief(path: Path, schema: Schema, split: str) -> Corpus:
    name_index = _slot_name_index(schema)
    dialogues: list[Dialogue] = []
    for entry in _load_json_array(path):
        dialogue_id = str(entry.get("dialogue_idx", entry.get("dialogue_id", "")))
        where = f"{path}: dialogue {dialogue_id!r}"
        raw_turns = entry.get("dialogue")
        if not isinstance(raw_turns, list):
            raise FormatError(f"{where}: field 'dialogue' missing or not an array")
        turns: list[TurnPair] = []
        for j, raw_turn in enumerate(raw_turns):
            turn_where = f"{where} turn {j}"
            state: dict[str, str] = {}
            for item in raw_turn.get("belief_state", []):
                if item.get("act") not in (None, "inform"):
                    continue
                for pair in item.get("slots", []):
                    if len(pair) != 2:
                        raise FormatError(f"{turn_where}: malformed belief slot pair {pair!r}")
                    raw_name, value = pair
                    slot_id = _resolve_slot_name(name_index, raw_name, turn_where)
                    if value:
                        state[slot_id] = str(value)
            turns.append(
                TurnPair(
                    index=j + 1,
                    system_utterance=str(raw_turn.get("system_transcript", "")),
                    user_utterance=str(raw_turn.get("transcript", "")),
                    gold_state=state,
                )
            )
        dialogues.append(Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), split=split))
    return Corpus(schema=schema, dialogues=tuple(dialogues), name=path.stem)


def _ingest_m2m_flat(path: Path, schema: Schema, split: str) -> Corpus:
    dialogues: list[Dialogue] = []
    for entry in _load_json_array(path):
        dialogue_id = str(entry.get("id", entry.get("dialogue_id", "")))
        where = f"{path}: dialogue {dialogue_id!r}"
        domain = entry.get("domain")
        name_index = _slot_name_index(schema, domain=domain)
        raw_turns = entry.get("turns")
        if not isinstance(raw_turns, list):
            raise FormatError(f"{where}: field 'turns' missing or not an array")
        turns: list[TurnPair] = []
        for j, raw_turn in enumerate(raw_turns):
            turn_where = f"{where} turn {j}"
            state: dict[str, str] = {}
            for item in raw_turn.get("dialogue_state", []):
                slot_id = _resolve_slot_name(name_index, item.get("slot"), turn_where)
                value = item.get("value")
                if value:
                    state[slot_id] = str(value)
            system = raw_turn.get("system_utterance") or {}
            user = raw_turn.get("user_utterance") or {}
            turns.append(
                TurnPair(
                    index=j + 1,
                    system_utterance=str(system.get("text", "")),
                    user_utterance=str(user.get("text", "")),
                    gold_state=state,
                )
            )
        dialogues.append(Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), split=split))
    return Corpus(schema=schema, dialogues=tuple(dialogues), name=path.stem)


def _ingest_sgd_state(path: Path, schema: Schema, split: str) -> Corpus:
    dialogues: list[Dialogue] = []
    for entry in _load_json_array(path):
        dialogue_id = str(entry.get("dialogue_id", ""))
        where = f"{path}: dialogue {dialogue_id!r}"
        raw_turns = entry.get("turns")
        if not isinstance(raw_turns, list):
            raise FormatError(f"{where}: field 'turns' missing or not an array")
        turns: list[TurnPair] = []
        pending_system = ""
        for j, raw_turn in enumerate(raw_turns):
            speaker = str(raw_turn.get("speaker", "")).upper()
            utterance = str(raw_turn.get("utterance", ""))
            if speaker == "SYSTEM":
                pending_system = utterance
                continue
            if speaker != "USER":
                raise FormatError(f"{where} turn {j}: unknown speaker {speaker!r}")
            state: dict[str, str] = {}
            for frame in raw_turn.get("frames", []):
                slot_values = (frame.get("state") or {}).get("slot_values") or {}
                for slot_id, variants in slot_values.items():
                    if slot_id not in schema:
                        raise FormatError(
                            f"{where} turn {j}: state names unknown slot {slot_id!r}"
                        )
                    if isinstance(variants, list):
                        if not variants:
                            continue
                        state[slot_id] = str(variants[0])
                    else:
                        state[slot_id] = str(variants)
            turns.append(
                TurnPair(
                    index=len(turns) + 1,
                    system_utterance=pending_system,
                    user_utterance=utterance,
                    gold_state=state,
                )
            )
            pending_system = ""
        dialogues.append(Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), split=split))
    return Corpus(schema=schema, dialogues=tuple(dialogues), name=path.stem)


def load_sgd_schema(path: str | Path) -> Schema:
    """Convert a schema-guided services file (array of services with a
    'slots' list each) into a canonical Schema."""
    path = Path(path)
    raw = _load_json_array(path)
    slots: list[SlotSchema] = []
    for service in raw:
        service_name = str(service.get("service_name", ""))
        for slot in service.get("slots", []):
            raw_name = str(slot.get("name", ""))
            # service files commonly prefix slot names with the domain
            name = raw_name.split("-", 1)[1] if raw_name.startswith(f"{service_name}-") else raw_name
            possible = slot.get("possible_values") or None
            slots.append(
                SlotSchema(
                    slot_id=f"{service_name}-{name}",
                    domain=service_name,
                    name=name,
                    description=str(slot.get("description", "")),
                    possible_values=tuple(possible) if possible else None,
                )
            )
    schema = Schema(slots=tuple(slots))
    validate_schema(schema)
    return schema
