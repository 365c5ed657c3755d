"""Paraphrase coarse explanations into third-person narrations.

Calls a remote completion endpoint with an instruction plus a few
demonstration pairs, caches responses by content hash so reruns are
free, retries transient failures with exponential backoff, and offers an
offline mode (deterministic speaker-tag stripping) so the whole pipeline
runs without credentials.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .builder import CoTExample
from .errors import AuthError, EmptyCompletionError, FormatError, NetworkError, ValidationError

DEFAULT_API_KEY_ENV_VAR = "COTE_API_KEY"
DEFAULT_INSTRUCTION = (
    "Rewrite the following dialogue snippet as a single third-person "
    "narration, preserving all entities and values."
)

_RETRYABLE_STATUSES = {408, 429, 500, 502, 503, 504}
_TAG_RE = re.compile(r"(?:system|user):\s*")


@dataclass(frozen=True)
class RefineConfig:
    endpoint_url: str = ""
    model_name: str = ""
    api_key_env_var: str = DEFAULT_API_KEY_ENV_VAR
    instruction: str = DEFAULT_INSTRUCTION
    demonstrations: tuple[tuple[str, str], ...] = ()
    temperature: float = 0.0
    max_tokens: int = 256
    max_retries: int = 3
    backoff_base: float = 1.0
    request_timeout: float = 60.0
    max_parallel: int = 1
    cache_dir: str = ""
    offline: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValidationError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_parallel < 1:
            raise ValidationError(f"max_parallel must be >= 1, got {self.max_parallel}")
        if self.max_retries < 0:
            raise ValidationError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_base < 0:
            raise ValidationError(f"backoff_base must be >= 0, got {self.backoff_base}")
        if not self.offline:
            if not self.demonstrations:
                raise ValidationError("demonstrations must be non-empty unless offline")
            if not self.endpoint_url:
                raise ValidationError("endpoint_url required unless offline")
            if not self.model_name:
                raise ValidationError("model_name required unless offline")


@dataclass(frozen=True)
class RefineResult:
    coarse: str
    refined: str
    source: str  # "api" | "cache" | "offline_passthrough"
    request_fingerprint: str


@dataclass(frozen=True)
class RefineFailure:
    example_id: str
    error: str


@dataclass(frozen=True)
class RefineBatchOutcome:
    examples: tuple[CoTExample, ...]
    failures: tuple[RefineFailure, ...]


def load_refine_config(path: str | Path | None = None, **overrides) -> RefineConfig:
    """Config from a JSON file (the bundled default when path is None),
    with keyword overrides taking precedence."""
    if path is None:
        text = resources.files("slotchain").joinpath("data/refine_config.json").read_text(
            encoding="utf-8"
        )
        source = "bundled refine_config.json"
    else:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{source}: expected a JSON object")
    known = {f for f in RefineConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"{source}: unknown config fields: {sorted(unknown)}")
    if "demonstrations" in data:
        demos = data["demonstrations"]
        if not isinstance(demos, list) or not all(
            isinstance(p, list) and len(p) == 2 for p in demos
        ):
            raise FormatError(f"{source}: demonstrations must be [coarse, refined] pairs")
        data["demonstrations"] = tuple((str(c), str(r)) for c, r in demos)
    data.update(overrides)
    return RefineConfig(**data)


def request_fingerprint(config: RefineConfig, coarse: str) -> str:
    """Content hash of everything that determines the completion:
    instruction, demonstrations, model name, and the coarse text."""
    payload = json.dumps(
        {
            "instruction": config.instruction,
            "demonstrations": [list(pair) for pair in config.demonstrations],
            "model_name": config.model_name,
            "coarse": coarse,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_refine_prompt(config: RefineConfig, coarse: str) -> str:
    blocks = [config.instruction]
    for demo_coarse, demo_refined in config.demonstrations:
        blocks.append(f"Dialogue: {demo_coarse}\nNarration: {demo_refined}")
    blocks.append(f"Dialogue: {coarse}\nNarration:")
    return "\n\n".join(blocks)


def strip_speaker_tags(coarse: str) -> str:
    """Deterministic offline stand-in for the remote paraphrase: delete
    the "system:" / "user:" tags and tidy the whitespace."""
    return " ".join(_TAG_RE.sub("", coarse).split())


def _cache_path(config: RefineConfig, fingerprint: str) -> Path | None:
    if not config.cache_dir:
        return None
    return Path(config.cache_dir) / fingerprint


def _cache_read(config: RefineConfig, fingerprint: str) -> str | None:
    path = _cache_path(config, fingerprint)
    if path is None or not path.is_file():
        return None
    return path.read_text(encoding="utf-8")


def _cache_write(config: RefineConfig, fingerprint: str, refined: str) -> None:
    path = _cache_path(config, fingerprint)
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(refined)
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


def _extract_completion_text(data: object) -> str | None:
    if isinstance(data, dict):
        if isinstance(data.get("text"), str):
            return data["text"]
        choices = data.get("choices")
        if isinstance(choices, list) and choices and isinstance(choices[0], dict):
            text = choices[0].get("text")
            if isinstance(text, str):
                return text
    return None


def _request_completion(config: RefineConfig, coarse: str, api_key: str) -> str:
    body = {
        "model": config.model_name,
        "prompt": build_refine_prompt(config, coarse),
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    last_error = ""
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(config.backoff_base * 2 ** (attempt - 1))
        try:
            response = requests.post(
                config.endpoint_url,
                json=body,
                headers=headers,
                timeout=config.request_timeout,
            )
        except requests.exceptions.RequestException as exc:
            last_error = f"request failed: {exc}"
            continue
        if response.status_code in (401, 403):
            raise AuthError(
                f"endpoint rejected the key from ${config.api_key_env_var} "
                f"(HTTP {response.status_code})"
            )
        if response.status_code in _RETRYABLE_STATUSES:
            last_error = f"HTTP {response.status_code}"
            continue
        if response.status_code != 200:
            raise NetworkError(f"completion request failed: HTTP {response.status_code}")
        try:
            data = response.json()
        except ValueError as exc:
            raise NetworkError(f"completion response is not JSON: {exc}") from exc
        text = _extract_completion_text(data)
        if text is None:
            raise NetworkError(
                "completion response carries neither 'text' nor 'choices[0].text'"
            )
        return text
    raise NetworkError(
        f"completion request failed after {config.max_retries + 1} attempts "
        f"(last: {last_error})"
    )


def refine_one(coarse: str, config: RefineConfig) -> RefineResult:
    """Refine one coarse explanation.

    Offline mode is a pure function and never touches the cache, so
    offline artifacts are reproducible regardless of cache state. Online,
    the cache is consulted before the key is even looked up, letting
    warm-cache runs work without credentials.
    """
    if not coarse:
        raise ValidationError("cannot refine an empty coarse explanation")
    fingerprint = request_fingerprint(config, coarse)
    if config.offline:
        refined = strip_speaker_tags(coarse)
        if not refined:
            raise EmptyCompletionError("offline passthrough produced an empty narration")
        return RefineResult(coarse, refined, "offline_passthrough", fingerprint)
    cached = _cache_read(config, fingerprint)
    if cached is not None:
        return RefineResult(coarse, cached, "cache", fingerprint)
    api_key = os.environ.get(config.api_key_env_var, "")
    if not api_key:
        raise AuthError(f"environment variable {config.api_key_env_var} is not set")
    refined = _request_completion(config, coarse, api_key).strip()
    if not refined:
        raise EmptyCompletionError("endpoint returned a whitespace-only completion")
    _cache_write(config, fingerprint, refined)
    return RefineResult(coarse, refined, "api", fingerprint)


def refine_batch(
    examples: Iterable[CoTExample] | Sequence[CoTExample],
    config: RefineConfig,
) -> RefineBatchOutcome:
    """Refine every coarse-explanation example, at most ``max_parallel``
    requests in flight. Order and multiset of examples are preserved;
    items that fail are emitted unchanged and reported as failures. A
    rejected or missing key aborts the whole batch."""
    examples = tuple(examples)
    todo = [
        i
        for i, e in enumerate(examples)
        if e.explanation_kind == "coarse" and e.explanation
    ]
    out = list(examples)
    failures: list[RefineFailure] = []
    auth_error: AuthError | None = None

    def work(index: int) -> tuple[int, RefineResult | Exception]:
        try:
            return index, refine_one(examples[index].explanation, config)
        except Exception as exc:
            return index, exc

    if todo:
        with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
            for index, result in pool.map(work, todo):
                if isinstance(result, AuthError):
                    auth_error = auth_error or result
                elif isinstance(result, Exception):
                    failures.append(
                        RefineFailure(example_id=examples[index].example_id, error=str(result))
                    )
                else:
                    out[index] = replace(
                        examples[index],
                        explanation=result.refined,
                        explanation_kind="refined",
                    )
    if auth_error is not None:
        raise auth_error
    return RefineBatchOutcome(examples=tuple(out), failures=tuple(failures))
