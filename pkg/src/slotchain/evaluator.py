"""Joint goal accuracy, bucketed fine-grained reports, low-resource
sampling, and report emission.

A turn counts as correct only when every slot in the schema matches the
gold state, absent slots matching the "none" sentinel. Buckets slice the
same per-turn correctness three ways: by reasoning depth (step), by
dialogue length (turn), and by average utterance length (len).
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .builder import avg_utterance_len, parse_generation
from .chains import max_step_at_turns
from .corpus import Corpus, Dialogue
from .errors import (
    DuplicatePredictionError,
    FormatError,
    InvalidFractionError,
    TurnOutOfRangeError,
    UnknownDialogueError,
    UnknownSlotError,
    ValidationError,
)
from .normalize import (
    DEFAULT_POLICY,
    NONE_VALUE,
    NormalizationPolicy,
    policy_from_dict,
    policy_to_dict,
    values_match,
)

AXES = ("step", "turn", "len")


@dataclass(frozen=True)
class PredictionRecord:
    """One generation for a (dialogue, turn, slot) sample. The text may
    carry a trailing explanation; only the parsed value is scored."""

    dialogue_id: str
    query_turn: int
    slot_id: str
    generated_text: str


def load_predictions(path: str | Path) -> tuple[PredictionRecord, ...]:
    """Predictions from JSONL rows {dialogue_id, turn, slot_id, text}."""
    path = Path(path)
    records: list[PredictionRecord] = []
    seen: dict[tuple[str, int, str], int] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {line_number}"
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: not valid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise FormatError(f"{where}: expected an object")
            dialogue_id = data.get("dialogue_id")
            turn = data.get("turn")
            slot_id = data.get("slot_id")
            text = data.get("text")
            if not isinstance(dialogue_id, str) or not dialogue_id:
                raise FormatError(f"{where}: field 'dialogue_id' missing or not a string")
            if not isinstance(turn, int) or isinstance(turn, bool):
                raise FormatError(f"{where}: field 'turn' missing or not an integer")
            if not isinstance(slot_id, str) or not slot_id:
                raise FormatError(f"{where}: field 'slot_id' missing or not a string")
            if not isinstance(text, str) or not text.strip():
                raise FormatError(f"{where}: field 'text' missing, empty, or not a string")
            key = (dialogue_id, turn, slot_id)
            if key in seen:
                raise DuplicatePredictionError(
                    f"{where}: duplicates line {seen[key]} ({dialogue_id!r}, {turn}, {slot_id!r})"
                )
            seen[key] = line_number
            records.append(PredictionRecord(dialogue_id, turn, slot_id, text))
    return tuple(records)


def _index_predictions(
    corpus: Corpus,
    predictions: Iterable[PredictionRecord],
) -> dict[tuple[str, int, str], str]:
    by_id = {d.dialogue_id: d for d in corpus.dialogues}
    indexed: dict[tuple[str, int, str], str] = {}
    for record in predictions:
        dialogue = by_id.get(record.dialogue_id)
        if dialogue is None:
            raise UnknownDialogueError(f"prediction names unknown dialogue {record.dialogue_id!r}")
        if record.slot_id not in corpus.schema:
            raise UnknownSlotError(f"prediction names unknown slot {record.slot_id!r}")
        if not 1 <= record.query_turn <= dialogue.n_turns:
            raise TurnOutOfRangeError(
                f"prediction turn {record.query_turn} outside dialogue "
                f"{record.dialogue_id!r} with {dialogue.n_turns} turns"
            )
        key = (record.dialogue_id, record.query_turn, record.slot_id)
        if key in indexed:
            raise DuplicatePredictionError(f"duplicate prediction for {key}")
        value, _ = parse_generation(record.generated_text)
        indexed[key] = value
    return indexed


def _turn_correctness(
    corpus: Corpus,
    predictions: Iterable[PredictionRecord],
    policy: NormalizationPolicy,
    split: str | None,
) -> tuple[dict[tuple[str, int], bool], int]:
    """Per evaluated turn, whether every slot matched; plus how many
    (turn, slot) lookups fell back to the "none" default."""
    indexed = _index_predictions(corpus, predictions)
    slots = corpus.schema.slots
    correctness: dict[tuple[str, int], bool] = {}
    missing = 0
    for dialogue in corpus.dialogues_in(split):
        for turn in dialogue.turns:
            ok = True
            for slot in slots:
                key = (dialogue.dialogue_id, turn.index, slot.slot_id)
                predicted = indexed.get(key)
                if predicted is None:
                    missing += 1
                    predicted = NONE_VALUE
                gold = turn.gold_state.get(slot.slot_id, NONE_VALUE)
                if ok and not values_match(
                    predicted, gold, policy, categorical=slot.is_categorical
                ):
                    ok = False
            correctness[(dialogue.dialogue_id, turn.index)] = ok
    return correctness, missing


# ---------------------------------------------------------------------------
# buckets


@dataclass(frozen=True)
class Bucket:
    """Half-open range [lo, hi); hi None means open-ended."""

    lo: int
    hi: int | None

    @property
    def label(self) -> str:
        if self.hi is None:
            return f"{self.lo}+"
        if self.hi == self.lo + 1:
            return str(self.lo)
        return f"{self.lo}-{self.hi - 1}"

    def contains(self, value: float) -> bool:
        return value >= self.lo and (self.hi is None or value < self.hi)


@dataclass(frozen=True)
class BucketSpec:
    """Disjoint ascending ranges covering every non-negative value."""

    axis: str
    edges: tuple[Bucket, ...]

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ValidationError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.edges:
            raise ValidationError("bucket spec needs at least one range")
        if self.edges[0].lo != 0:
            raise ValidationError("first range must start at 0")
        for i, bucket in enumerate(self.edges):
            last = i == len(self.edges) - 1
            if last:
                if bucket.hi is not None:
                    raise ValidationError("final range must be open-ended (null hi)")
            else:
                if bucket.hi is None:
                    raise ValidationError("only the final range may be open-ended")
                if bucket.hi <= bucket.lo:
                    raise ValidationError(f"empty range [{bucket.lo}, {bucket.hi})")
                if self.edges[i + 1].lo != bucket.hi:
                    raise ValidationError(
                        f"ranges must be contiguous: [{bucket.lo}, {bucket.hi}) "
                        f"then lo={self.edges[i + 1].lo}"
                    )

    def bucket_for(self, value: float) -> Bucket:
        for bucket in self.edges:
            if bucket.contains(value):
                return bucket
        raise ValidationError(f"value {value} below every range")


def load_bucket_spec(path_or_name: str | Path) -> BucketSpec:
    """Spec from a JSON file, or from the bundled set by bare name
    (step, mwz_turn, mwz_len, m2m_len, woz_turn, woz_len)."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        source = str(path)
    else:
        name = str(path_or_name)
        candidate = resources.files("slotchain").joinpath(f"data/bucket_specs/{name}.json")
        if not name.replace("_", "").isalnum() or not candidate.is_file():
            raise FormatError(f"{path_or_name}: neither a file nor a bundled bucket spec")
        text = candidate.read_text(encoding="utf-8")
        source = f"bundled {name}"
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("edges"), list):
        raise FormatError(f"{source}: expected an object with 'axis' and 'edges'")
    edges = []
    for pair in data["edges"]:
        if not isinstance(pair, list) or len(pair) != 2:
            raise FormatError(f"{source}: each edge must be a [lo, hi] pair")
        lo, hi = pair
        if not isinstance(lo, int) or not (hi is None or isinstance(hi, int)):
            raise FormatError(f"{source}: edge bounds must be integers (hi may be null)")
        edges.append(Bucket(lo=lo, hi=hi))
    return BucketSpec(axis=str(data.get("axis", "")), edges=tuple(edges))


def _axis_value_by_turn(
    dialogue: Dialogue, axis: str, policy: NormalizationPolicy
) -> list[float]:
    if axis == "step":
        return [float(v) for v in max_step_at_turns(dialogue, policy)]
    if axis == "turn":
        return [float(dialogue.n_turns)] * dialogue.n_turns
    if axis == "len":
        return [avg_utterance_len(dialogue)] * dialogue.n_turns
    raise ValidationError(f"unknown axis {axis!r}")


def bucketize(
    corpus: Corpus,
    spec: BucketSpec,
    split: str | None = None,
    policy: NormalizationPolicy = DEFAULT_POLICY,
) -> dict[tuple[str, int], Bucket]:
    """Assign every evaluated (dialogue_id, turn) to exactly one bucket."""
    assignment: dict[tuple[str, int], Bucket] = {}
    for dialogue in corpus.dialogues_in(split):
        values = _axis_value_by_turn(dialogue, spec.axis, policy)
        for turn, value in zip(dialogue.turns, values):
            assignment[(dialogue.dialogue_id, turn.index)] = spec.bucket_for(value)
    return assignment


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class BucketResult:
    axis: str
    label: str
    lo: int
    hi: int | None
    n_turns: int
    jga: float | None  # None marks an empty bucket, not zero accuracy


@dataclass(frozen=True)
class EvalReport:
    overall_jga: float
    n_dialogues: int
    n_turns: int
    n_missing_predictions: int
    policy: NormalizationPolicy
    buckets: tuple[BucketResult, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.overall_jga <= 1.0:
            raise ValidationError(f"overall_jga {self.overall_jga} outside [0, 1]")
        for axis in {b.axis for b in self.buckets}:
            axis_total = sum(b.n_turns for b in self.buckets if b.axis == axis)
            if axis_total != self.n_turns:
                raise ValidationError(
                    f"axis {axis!r} buckets cover {axis_total} turns of {self.n_turns}"
                )


def compute_jga(
    corpus: Corpus,
    predictions: Sequence[PredictionRecord],
    policy: NormalizationPolicy = DEFAULT_POLICY,
    split: str | None = None,
) -> EvalReport:
    """Joint goal accuracy: the fraction of turns whose full predicted
    state matches gold. Missing predictions default to "none" and are
    tallied in the report."""
    correctness, missing = _turn_correctness(corpus, predictions, policy, split)
    n_turns = len(correctness)
    correct = sum(correctness.values())
    return EvalReport(
        overall_jga=correct / n_turns if n_turns else 0.0,
        n_dialogues=len(corpus.dialogues_in(split)),
        n_turns=n_turns,
        n_missing_predictions=missing,
        policy=policy,
    )


def fine_grained_report(
    corpus: Corpus,
    predictions: Sequence[PredictionRecord],
    policy: NormalizationPolicy = DEFAULT_POLICY,
    specs: Sequence[BucketSpec] = (),
    split: str | None = None,
) -> EvalReport:
    """compute_jga plus per-bucket accuracy for each axis spec."""
    correctness, missing = _turn_correctness(corpus, predictions, policy, split)
    n_turns = len(correctness)
    buckets: list[BucketResult] = []
    for spec in specs:
        assignment = bucketize(corpus, spec, split, policy)
        for bucket in spec.edges:
            keys = [k for k, b in assignment.items() if b == bucket]
            n = len(keys)
            jga = sum(correctness[k] for k in keys) / n if n else None
            buckets.append(
                BucketResult(
                    axis=spec.axis,
                    label=bucket.label,
                    lo=bucket.lo,
                    hi=bucket.hi,
                    n_turns=n,
                    jga=jga,
                )
            )
    return EvalReport(
        overall_jga=sum(correctness.values()) / n_turns if n_turns else 0.0,
        n_dialogues=len(corpus.dialogues_in(split)),
        n_turns=n_turns,
        n_missing_predictions=missing,
        policy=policy,
        buckets=tuple(buckets),
    )


# ---------------------------------------------------------------------------
# low-resource sampling


def low_resource_sample(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Keep ⌈fraction × train dialogues⌉ whole train dialogues, chosen by
    seeded shuffle of the sorted dialogue ids; dev and test untouched.
    Pure function of (corpus, fraction, seed)."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidFractionError(f"fraction must be in (0, 1], got {fraction}")
    train_ids = sorted(d.dialogue_id for d in corpus.dialogues_in("train"))
    if not train_ids:
        raise ValidationError("corpus has no train dialogues to sample")
    rng = random.Random(seed)
    rng.shuffle(train_ids)
    keep = set(train_ids[: math.ceil(fraction * len(train_ids))])
    dialogues = tuple(
        d for d in corpus.dialogues if d.split != "train" or d.dialogue_id in keep
    )
    return Corpus(schema=corpus.schema, dialogues=dialogues, name=corpus.name)


# ---------------------------------------------------------------------------
# report serialization


def report_to_dict(report: EvalReport) -> dict:
    return {
        "overall_jga": report.overall_jga,
        "n_dialogues": report.n_dialogues,
        "n_turns": report.n_turns,
        "n_missing_predictions": report.n_missing_predictions,
        "policy": policy_to_dict(report.policy),
        "buckets": [
            {
                "axis": b.axis,
                "label": b.label,
                "lo": b.lo,
                "hi": b.hi,
                "n_turns": b.n_turns,
                "jga": b.jga,
            }
            for b in report.buckets
        ],
    }


def report_from_dict(data: Mapping) -> EvalReport:
    try:
        return EvalReport(
            overall_jga=data["overall_jga"],
            n_dialogues=data["n_dialogues"],
            n_turns=data["n_turns"],
            n_missing_predictions=data["n_missing_predictions"],
            policy=policy_from_dict(data["policy"]),
            buckets=tuple(
                BucketResult(
                    axis=b["axis"],
                    label=b["label"],
                    lo=b["lo"],
                    hi=b["hi"],
                    n_turns=b["n_turns"],
                    jga=b["jga"],
                )
                for b in data["buckets"]
            ),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed report: {exc}") from exc


def read_report(path: str | Path) -> EvalReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    return report_from_dict(data)


def _format_jga(jga: float | None) -> str:
    return "n/a" if jga is None else f"{jga:.4f}"


def render_report(report: EvalReport, format: str) -> str:
    """Report as json, markdown, or csv text (stable field order)."""
    if format == "json":
        return json.dumps(report_to_dict(report), ensure_ascii=False, indent=2) + "\n"
    if format == "markdown":
        lines = [
            "# Evaluation report",
            "",
            f"- overall JGA: {_format_jga(report.overall_jga)}",
            f"- dialogues: {report.n_dialogues}",
            f"- turns: {report.n_turns}",
            f"- missing predictions defaulted to none: {report.n_missing_predictions}",
        ]
        for axis in AXES:
            rows = [b for b in report.buckets if b.axis == axis]
            if not rows:
                continue
            lines += ["", f"## {axis}", "", "| bucket | turns | JGA |", "| --- | --- | --- |"]
            for b in rows:
                lines.append(f"| {b.label} | {b.n_turns} | {_format_jga(b.jga)} |")
        return "\n".join(lines) + "\n"
    if format == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["axis", "bucket", "n_turns", "jga"])
        writer.writerow(["overall", "all", report.n_turns, _format_jga(report.overall_jga)])
        for b in report.buckets:
            writer.writerow([b.axis, b.label, b.n_turns, _format_jga(b.jga)])
        return out.getvalue()
    raise ValidationError(f"unknown report format {format!r}")


def emit_report(report: EvalReport, format: str, path: str | Path | None = None) -> str:
    text = render_report(report, format)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
