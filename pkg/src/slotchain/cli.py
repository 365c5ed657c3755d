"""Command-line pipeline over the library.

One binary with subcommands: ingest, validate, stats, build, refine,
sample, eval, report. Data goes to --out or standard output; everything
else (progress, warnings, errors) goes to standard error. Exit codes:
0 success, 1 data or validation error, 2 usage error, 3 a refine run
that finished with some items unrefined. No subcommand rewrites its
input files.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .builder import (
    DEFAULT_TEMPLATE,
    build_dataset,
    examples_to_jsonl,
    load_question_overrides,
    load_template,
    read_examples,
)
from .chains import step_histogram
from .corpus import (
    SPLITS,
    Corpus,
    Schema,
    corpus_to_json,
    filter_excluded_domains,
    ingest_legacy,
    load_corpus,
    load_schema,
    merge_corpora,
)
from .errors import FormatError, SlotchainError
from .evaluator import (
    fine_grained_report,
    load_bucket_spec,
    load_predictions,
    low_resource_sample,
    read_report,
    render_report,
)
from .normalize import DEFAULT_POLICY, policy_from_dict
from .refiner import load_refine_config, refine_batch

_LEGACY_STYLES = ("woz_belief", "m2m_flat", "sgd_state")


def _note(args: argparse.Namespace, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_exclude(value: str) -> set[str]:
    return {part.strip() for part in value.split(",") if part.strip()}


def _load_schema_arg(value: str) -> Schema:
    """A schema file path, or a bundled schema by bare name."""
    path = Path(value)
    if path.is_file():
        return load_schema(path)
    bundled = resources.files("slotchain").joinpath(f"data/schemas/{value}.json")
    if value.replace("_", "").isalnum() and bundled.is_file():
        with resources.as_file(bundled) as real_path:
            return load_schema(real_path)
    raise FormatError(f"{value}: neither a schema file nor a bundled schema name")


def _load_corpus_arg(args: argparse.Namespace, schema: Schema) -> Corpus:
    corpus = load_corpus(
        [args.corpus], schema, _parse_exclude(args.exclude_domains), name=""
    )
    _note(args, f"loaded {len(corpus.dialogues)} dialogues from {args.corpus}")
    return corpus


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    exclude = _parse_exclude(args.exclude_domains)
    if args.style == "canonical":
        corpus = load_corpus(args.input, schema, exclude, name=args.name)
    else:
        parts = [
            ingest_legacy(path, args.style, schema, split=args.split)
            for path in args.input
        ]
        corpus = merge_corpora(parts, name=args.name)
        corpus = filter_excluded_domains(corpus, exclude)
    counts = corpus.split_counts()
    summary = " ".join(f"{split}={counts.get(split, 0)}" for split in SPLITS)
    print(
        f"ingested dialogues: {summary} (total {sum(counts.values())})",
        file=sys.stderr,
    )
    _emit(corpus_to_json(corpus), args.out)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    corpus = _load_corpus_arg(args, schema)
    counts = corpus.split_counts()
    summary = {
        "dialogues": len(corpus.dialogues),
        "turns": sum(d.n_turns for d in corpus.dialogues),
        "splits": {split: counts[split] for split in sorted(counts)},
        "slots": len(schema.slots),
    }
    print("corpus is valid", file=sys.stderr)
    _emit(json.dumps(summary, ensure_ascii=False, indent=2) + "\n", args.out)
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    corpus = _load_corpus_arg(args, schema)
    histogram = step_histogram(corpus, split=args.split)
    if args.format == "json":
        payload = {
            "counts": histogram.to_dict(),
            "total_active": histogram.total_active,
            "multi_step_fraction": histogram.multi_step_fraction,
        }
        _emit(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", args.out)
        return 0
    lines = [f"{'step':<6}{'samples':>9}{'share':>9}"]
    total = histogram.total_active
    for steps in sorted(histogram.counts):
        count = histogram.counts[steps]
        share = count / total if total else 0.0
        lines.append(f"{steps:<6d}{count:>9d}{share:>9.2%}")
    lines.append("")
    lines.append(f"total active samples: {total}")
    lines.append(f"multi-step share (step >= 2): {histogram.multi_step_fraction:.2%}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    corpus = _load_corpus_arg(args, schema)
    template = load_template(args.template_file) if args.template_file else DEFAULT_TEMPLATE
    overrides = (
        load_question_overrides(args.overrides_file, schema)
        if args.overrides_file
        else None
    )
    examples = build_dataset(
        corpus,
        template=template,
        overrides=overrides,
        include_explanations=not args.no_explanations,
        include_inactive=args.include_inactive,
        split=args.split,
    )
    _note(args, f"built {len(examples)} examples")
    _emit(examples_to_jsonl(examples), args.out)
    return 0


def _cmd_refine(args: argparse.Namespace) -> int:
    overrides = {}
    if args.offline:
        overrides["offline"] = True
    if args.max_parallel is not None:
        overrides["max_parallel"] = args.max_parallel
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    config = load_refine_config(args.config, **overrides)
    examples = read_examples(args.examples)
    outcome = refine_batch(examples, config)
    for failure in outcome.failures:
        print(f"warning: {failure.example_id}: {failure.error}", file=sys.stderr)
    refined = sum(
        1
        for before, after in zip(examples, outcome.examples)
        if before.explanation_kind == "coarse" and after.explanation_kind == "refined"
    )
    _note(args, f"refined {refined} of {len(examples)} examples")
    _emit(examples_to_jsonl(outcome.examples), args.out)
    if outcome.failures:
        print(f"{len(outcome.failures)} example(s) left unrefined", file=sys.stderr)
        return 3
    return 0


def _cmd_sample(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    corpus = _load_corpus_arg(args, schema)
    sampled = low_resource_sample(corpus, args.fraction, seed=args.seed)
    kept = sampled.split_counts().get("train", 0)
    print(
        f"kept {kept} of {corpus.split_counts().get('train', 0)} train dialogues "
        f"(fraction {args.fraction}, seed {args.seed})",
        file=sys.stderr,
    )
    _emit(corpus_to_json(sampled), args.out)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    schema = _load_schema_arg(args.schema)
    corpus = _load_corpus_arg(args, schema)
    predictions = load_predictions(args.predictions)
    policy = DEFAULT_POLICY
    if args.policy:
        policy_path = Path(args.policy)
        try:
            data = json.loads(policy_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{policy_path}: not valid JSON: {exc}") from exc
        policy = policy_from_dict(data)
    specs = [load_bucket_spec(name) for name in args.buckets]
    report = fine_grained_report(
        corpus, predictions, policy=policy, specs=specs, split=args.split
    )
    if report.n_missing_predictions:
        print(
            f"{report.n_missing_predictions} missing predictions defaulted to none",
            file=sys.stderr,
        )
    _emit(render_report(report, args.format), args.out)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = read_report(args.report)
    _emit(render_report(report, args.format), args.out)
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "validate": _cmd_validate,
    "stats": _cmd_stats,
    "build": _cmd_build,
    "refine": _cmd_refine,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="chatty progress on stderr")
    common.add_argument("--seed", type=int, default=13, help="random seed (default 13)")
    common.add_argument("--out", help="write output here instead of stdout")

    parser = argparse.ArgumentParser(
        prog="slotchain",
        description="Turn dialogue state annotations into explanation-bearing "
        "training data and score predictions.",
    )
    parser.add_argument(
        "--version", action="version", version=f"slotchain {__version__}"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(
        "ingest", parents=[common], help="convert dialogue files into one canonical corpus"
    )
    p.add_argument("--input", nargs="+", required=True, help="source dialogue file(s)")
    p.add_argument(
        "--style",
        choices=("canonical",) + _LEGACY_STYLES,
        default="canonical",
        help="input layout (default canonical)",
    )
    p.add_argument("--schema", required=True, help="schema file or bundled name")
    p.add_argument("--split", help="split for legacy files when not inferable from the name")
    p.add_argument("--exclude-domains", default="", help="comma-separated domains to drop")
    p.add_argument("--name", default="", help="corpus name")

    p = sub.add_parser("validate", parents=[common], help="check a corpus and print a summary")
    p.add_argument("--corpus", required=True, help="canonical corpus file")
    p.add_argument("--schema", required=True, help="schema file or bundled name")
    p.add_argument("--exclude-domains", default="")

    p = sub.add_parser("stats", parents=[common], help="step histogram over slot chains")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--split", choices=SPLITS, help="restrict to one split")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--exclude-domains", default="")

    p = sub.add_parser("build", parents=[common], help="render prompt/target examples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--template-file", help="prompt template JSON")
    p.add_argument("--overrides-file", help="slot question overrides JSON")
    p.add_argument("--no-explanations", action="store_true", help="emit bare values")
    p.add_argument(
        "--include-inactive", action="store_true", help="keep slots with no value yet"
    )
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--exclude-domains", default="")

    p = sub.add_parser("refine", parents=[common], help="paraphrase coarse explanations")
    p.add_argument("--examples", required=True, help="examples JSONL from build")
    p.add_argument("--config", help="refine config JSON (bundled defaults otherwise)")
    p.add_argument("--offline", action="store_true", help="strip speaker tags, no network")
    p.add_argument("--max-parallel", type=int, help="request concurrency ceiling")
    p.add_argument("--cache-dir", help="completion cache directory")

    p = sub.add_parser("sample", parents=[common], help="keep a seeded fraction of train")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--fraction", type=float, required=True, help="train fraction in (0, 1]")
    p.add_argument("--exclude-domains", default="")

    p = sub.add_parser("eval", parents=[common], help="score predictions against gold states")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--predictions", required=True, help="predictions JSONL")
    p.add_argument("--policy", help="normalization policy JSON")
    p.add_argument(
        "--buckets",
        nargs="*",
        default=[],
        help="bucket spec files or bundled names (step, mwz_turn, ...)",
    )
    p.add_argument("--format", choices=("json", "markdown", "csv"), default="json")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--exclude-domains", default="")

    p = sub.add_parser("report", parents=[common], help="re-render a saved JSON report")
    p.add_argument("--report", required=True, help="report JSON from eval")
    p.add_argument("--format", choices=("json", "markdown", "csv"), default="markdown")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.subcommand](args)
    except SlotchainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
