"""Three-role model orchestration over a pluggable completion provider.

The planner turns material into a session plan (JSON), the designer writes
one dialogue per session (markup), and the suggester drafts extra patient
response options (numbered list). Every call validates the structured output
and, on failure, re-prompts with the previous answer plus the concrete parse
errors, up to a bounded number of attempts. All exchanges are returned as
append-only audit records; with a scripted provider the whole pipeline is
deterministic."""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from . import prompts
from .exceptions import (
    EmptyDialogueError,
    InvalidStructuredOutputError,
    NoNovelOptionsError,
    ParseFailure,
    ProviderError,
)
from .markup import parse, parse_session_plan_json
from .model import (
    DialogueFsm,
    Material,
    SessionPlan,
    SessionTopic,
    plan_to_dict,
    text_key,
)

MAX_REPAIR_ATTEMPTS = 3

PLANNER_TEMPERATURE = 0.2
DESIGNER_TEMPERATURE = 0.4
SUGGESTER_TEMPERATURE = 0.8

_DEFAULT_MAX_OUTPUT_TOKENS = 4096


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    temperature: float
    max_output_tokens: int = _DEFAULT_MAX_OUTPUT_TOKENS


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: dict


class LlmProvider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


class ScriptedProvider:
    """Fixture-backed deterministic provider for tests and golden runs.

    Responses are returned in order, one per ``complete`` call; requests are
    recorded for inspection."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self._next = 0
        self.requests: list[CompletionRequest] = []

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedProvider":
        """Load ordered plain-text responses, one file per exchange, sorted
        by file name."""
        directory = Path(path)
        files = sorted(p for p in directory.iterdir() if p.is_file())
        if not files:
            raise ProviderError(f"no fixture files in {directory}")
        return cls([p.read_text(encoding="utf-8") for p in files])

    @property
    def calls(self) -> int:
        return self._next

    def complete(self, request: CompletionRequest) -> CompletionResult:
        self.requests.append(request)
        if self._next >= len(self._responses):
            raise ProviderError("scripted provider exhausted its responses")
        text = self._responses[self._next]
        self._next += 1
        return CompletionResult(text=text, usage={"scripted": True})


class HttpProvider:
    """Provider-neutral chat-completion client: JSON over HTTPS with a
    system and a user message."""

    def __init__(self, endpoint: str, api_key: str = "", model: str = "", timeout: float = 60.0):
        if not endpoint:
            raise ProviderError("no provider endpoint configured")
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> CompletionResult:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            response = httpx.post(
                f"{self.endpoint}/chat/completions", json=body, headers=headers, timeout=self.timeout
            )
            response.raise_for_status()
            data = response.json()
        except httpx.HTTPError as exc:
            raise ProviderError(f"provider unreachable: {exc}") from exc
        try:
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("provider returned an unexpected response shape") from exc
        return CompletionResult(text=text, usage=usage)


class ExchangeRole(str, Enum):
    PLANNER = "planner"
    DESIGNER = "designer"
    SUGGESTER = "suggester"


class ExchangeOutcome(str, Enum):
    PARSED = "parsed"  # first attempt produced usable output
    REPAIRED = "repaired"  # a retry produced usable output
    FAILED = "failed"  # this attempt's output was unusable


@dataclass(frozen=True)
class LlmExchange:
    role: ExchangeRole
    attempt: int
    request: CompletionRequest
    response_text: str
    outcome: ExchangeOutcome
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "attempt": self.attempt,
            "outcome": self.outcome.value,
            "timestamp": self.timestamp,
            "request": {
                "system_prompt": self.request.system_prompt,
                "user_prompt": self.request.user_prompt,
                "temperature": self.request.temperature,
                "max_output_tokens": self.request.max_output_tokens,
            },
            "response_text": self.response_text,
        }


_FENCE_RE = re.compile(r"```([A-Za-z0-9_-]*)[ \t]*\r?\n(.*?)(?:\r?\n)?```", re.DOTALL)


def extract_fenced_block(text: str, tag: str = "") -> Optional[str]:
    """Return the first fenced code block, preferring blocks tagged ``tag``."""
    blocks = _FENCE_RE.findall(text)
    if not blocks:
        return None
    if tag:
        for block_tag, body in blocks:
            if block_tag.lower() == tag.lower():
                return body
    return blocks[0][1]


def _run_with_repair(
    role: ExchangeRole,
    provider: LlmProvider,
    system_prompt: str,
    user_prompt: str,
    temperature: float,
    parse_response: Callable[[str], tuple[Optional[object], list[str]]],
    max_attempts: int,
    clock: Callable[[], float],
):
    """Shared attempt loop: call, parse, and on failure re-prompt with the
    previous output plus the problems found. At most ``max_attempts``
    provider calls are made per operation."""
    exchanges: list[LlmExchange] = []
    prompt = user_prompt
    for attempt in range(1, max_attempts + 1):
        request = CompletionRequest(system_prompt=system_prompt, user_prompt=prompt, temperature=temperature)
        result = provider.complete(request)
        value, problems = parse_response(result.text)
        if value is not None:
            outcome = ExchangeOutcome.PARSED if attempt == 1 else ExchangeOutcome.REPAIRED
            exchanges.append(LlmExchange(role, attempt, request, result.text, outcome, clock()))
            return value, exchanges
        exchanges.append(LlmExchange(role, attempt, request, result.text, ExchangeOutcome.FAILED, clock()))
        prompt = user_prompt + "\n\n" + prompts.REPAIR_USER.format(
            problems="\n".join(f"- {p}" for p in problems) or "- output was not usable",
            previous=result.text,
        )
    raise InvalidStructuredOutputError(role.value, exchanges)


def _parse_errors_as_problems(failure: ParseFailure) -> list[str]:
    return [f"line {e.line}, column {e.column}: {e.message}" for e in failure.errors]


@dataclass(frozen=True)
class RevisionCue:
    """Free-text author direction for adjusting an existing plan."""

    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("revision cue is empty")


def plan_sessions(
    material: Material,
    provider: LlmProvider,
    cue: Optional[RevisionCue] = None,
    prior: Optional[SessionPlan] = None,
    *,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
    clock: Callable[[], float] = time.time,
) -> tuple[SessionPlan, list[LlmExchange]]:
    """Ask the planner for a session plan. With a cue, the prior plan is
    included and the reply replaces it."""
    if cue is not None and prior is None:
        raise ValueError("a revision cue requires an existing plan to revise")

    if cue is None:
        user_prompt = prompts.PLANNER_USER.format(title=material.title, material=material.body)
    else:
        user_prompt = prompts.PLANNER_REVISION_USER.format(
            title=material.title,
            material=material.body,
            prior_plan=json.dumps(plan_to_dict(prior), indent=2, ensure_ascii=False),
            cue=cue.text,
        )

    def parse_response(text: str):
        block = extract_fenced_block(text, "json")
        if block is None:
            return None, ["no fenced code block found; put the JSON inside ```json ... ```"]
        try:
            return parse_session_plan_json(block), []
        except ParseFailure as failure:
            return None, _parse_errors_as_problems(failure)

    plan, exchanges = _run_with_repair(
        ExchangeRole.PLANNER,
        provider,
        prompts.PLANNER_SYSTEM,
        user_prompt,
        PLANNER_TEMPERATURE,
        parse_response,
        max_attempts,
        clock,
    )
    if cue is not None:
        plan = replace(plan, revision_note=cue.text)
    return plan, exchanges


def generate_fsm(
    material: Material,
    plan: SessionPlan,
    session: SessionTopic,
    provider: LlmProvider,
    *,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
    clock: Callable[[], float] = time.time,
) -> tuple[DialogueFsm, list[LlmExchange]]:
    """Ask the designer for one session's dialogue. The result always passes
    validation with an empty report; invalid output is repaired or the
    operation fails with the audit trail attached."""
    if plan.get(session.session_id) is None:
        raise ValueError(f"session {session.session_id!r} is not part of the plan")

    user_prompt = prompts.DESIGNER_USER.format(
        ordinal=session.ordinal,
        session_id=session.session_id,
        topic=session.title,
        key_points=prompts.format_key_points(session.key_points),
        plan=json.dumps(plan_to_dict(plan), indent=2, ensure_ascii=False),
        material=material.body,
    )

    saw_empty = False

    def parse_response(text: str):
        nonlocal saw_empty
        saw_empty = False
        block = extract_fenced_block(text, "hdfsm")
        if block is None:
            return None, ["no fenced code block found; put the markup inside ```hdfsm ... ```"]
        try:
            document = parse(block)
        except ParseFailure as failure:
            return None, _parse_errors_as_problems(failure)
        if len(document.dialogues) == 0:
            saw_empty = True
            return None, ["the document contains no DIALOGUE"]
        if len(document.dialogues) != 1:
            return None, [f"expected exactly one DIALOGUE, got {len(document.dialogues)}"]
        return document.dialogues[0].fsm, []

    try:
        fsm, exchanges = _run_with_repair(
            ExchangeRole.DESIGNER,
            provider,
            prompts.DESIGNER_SYSTEM,
            user_prompt,
            DESIGNER_TEMPERATURE,
            parse_response,
            max_attempts,
            clock,
        )
    except InvalidStructuredOutputError as exc:
        if saw_empty:
            raise EmptyDialogueError(exc.role, exc.exchanges, "designer produced an empty dialogue") from exc
        raise
    # Session identity comes from the plan, not from the model's output.
    if fsm.session_id != session.session_id:
        fsm = replace(fsm, session_id=session.session_id)
    return fsm, exchanges


def generate_all(
    material: Material,
    plan: SessionPlan,
    provider: LlmProvider,
    *,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
    clock: Callable[[], float] = time.time,
) -> tuple[dict[str, DialogueFsm], list[LlmExchange]]:
    """Generate every session's dialogue in plan order, sequentially, so a
    scripted provider is consumed deterministically."""
    fsms: dict[str, DialogueFsm] = {}
    all_exchanges: list[LlmExchange] = []
    for session in plan.sessions:
        fsm, exchanges = generate_fsm(
            material, plan, session, provider, max_attempts=max_attempts, clock=clock
        )
        fsms[session.session_id] = fsm
        all_exchanges.extend(exchanges)
    return fsms, all_exchanges


@dataclass(frozen=True)
class OptionDraft:
    """A suggested patient response with no transition yet; the author
    connects it (or attaches a new stub state) when accepting it."""

    label: str


_NUMBERED_LINE_RE = re.compile(r"^\s*(?:\d+[.)]|[-*])\s+(.*\S)\s*$")


def suggest_options(
    fsm: DialogueFsm,
    state_id: str,
    session: SessionTopic,
    material: Material,
    count: int,
    provider: LlmProvider,
    *,
    max_attempts: int = MAX_REPAIR_ATTEMPTS,
    clock: Callable[[], float] = time.time,
) -> tuple[list[OptionDraft], list[LlmExchange]]:
    """Ask the suggester for up to ``count`` new response options for one
    state. Suggestions that duplicate existing labels (case-insensitive) are
    dropped; if nothing novel remains after all attempts the operation fails
    with NoNovelOptionsError. Never mutates the FSM."""
    state = fsm.states.get(state_id)
    if state is None:
        raise ValueError(f"no state {state_id!r} in session {fsm.session_id!r}")
    existing = {text_key(opt.label) for opt in state.options}

    excerpt = material.body[:2000]
    user_prompt = prompts.SUGGESTER_USER.format(
        count=count,
        topic=session.title,
        utterance=state.agent_utterance,
        existing=", ".join(repr(opt.label) for opt in state.options) or "(none)",
        material=excerpt,
    )

    saw_no_novel = False

    def parse_response(text: str):
        nonlocal saw_no_novel
        saw_no_novel = False
        block = extract_fenced_block(text)
        if block is None:
            block = text  # tolerate a bare numbered list
        labels: list[str] = []
        for line in block.splitlines():
            match = _NUMBERED_LINE_RE.match(line)
            if match:
                label = match.group(1).strip().strip('"').strip()
                if label:
                    labels.append(label)
        if not labels:
            return None, ["no numbered list found; answer with '1. <suggestion>' lines"]
        novel: list[OptionDraft] = []
        seen = set(existing)
        for label in labels:
            key = text_key(label)
            if key not in seen:
                seen.add(key)
                novel.append(OptionDraft(label=label))
        if not novel:
            saw_no_novel = True
            return None, ["every suggestion duplicated an existing option label; propose different ones"]
        return novel[:count], []

    try:
        drafts, exchanges = _run_with_repair(
            ExchangeRole.SUGGESTER,
            provider,
            prompts.SUGGESTER_SYSTEM,
            user_prompt,
            SUGGESTER_TEMPERATURE,
            parse_response,
            max_attempts,
            clock,
        )
    except InvalidStructuredOutputError as exc:
        if saw_no_novel:
            raise NoNovelOptionsError(exc.exchanges) from exc
        raise
    return drafts, exchanges


# --- key point coverage --------------------------------------------------------

STOP_WORDS = frozenset(
    """a about above after again all am an and any are as at be because been
    before being below between both but by can did do does doing down during
    each few for from further had has have having he her here hers him his
    how i if in into is it its itself just me more most my no nor not of off
    on once only or other our ours out over own same she should so some such
    than that the their theirs them then there these they this those through
    to too under until up very was we were what when where which while who
    whom why will with you your yours""".split()
)

_WORD_RE = re.compile(r"[a-z0-9']+")


def content_words(text: str) -> set[str]:
    """Lowercased tokens minus stop words; falls back to all tokens when the
    text is nothing but stop words."""
    tokens = set(_WORD_RE.findall(text.casefold()))
    meaningful = tokens - STOP_WORDS
    return meaningful or tokens


#: A key point counts as covered when strictly more than this share of its
#: content words appear in a single agent utterance.
COVERAGE_THRESHOLD = 0.6


@dataclass(frozen=True)
class CoverageResult:
    covered: bool
    witness_states: tuple[str, ...]


def key_point_coverage(
    fsm: DialogueFsm,
    session: SessionTopic,
    threshold: float = COVERAGE_THRESHOLD,
) -> dict[str, CoverageResult]:
    """For each key point: is it voiced by some agent utterance, and where.

    A state witnesses a key point when the overlap between the point's
    content words and the utterance's words exceeds ``threshold``.
    """
    utterance_words = {
        state.state_id: content_words(state.agent_utterance) for state in fsm.sorted_states()
    }
    results: dict[str, CoverageResult] = {}
    for point in session.key_points:
        point_words = content_words(point)
        witnesses = []
        for state_id in sorted(utterance_words):
            if not point_words:
                break
            overlap = len(point_words & utterance_words[state_id]) / len(point_words)
            if overlap > threshold:
                witnesses.append(state_id)
        results[point] = CoverageResult(covered=bool(witnesses), witness_states=tuple(witnesses))
    return results
