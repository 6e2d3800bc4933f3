"""Domain model for session-based dialogue finite state machines.

A dialogue is a finite state machine: each state pairs one agent utterance
with the patient response options shown beneath it, and every option carries
exactly one transition to another state or to the reserved END sink. A state
with no options is terminal. Structural problems are reported as defect data
by :func:`validate_fsm`, never as construction failures, so that authors can
pass through intermediate shapes (for example a freshly added, not yet
connected state) while the rest of the system refuses to ship them.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

if TYPE_CHECKING:
    from .editing import EditHistory

#: Reserved transition sink. An option targeting END ends the conversation.
END = "END"

#: Default cap on material size, in characters, to bound prompt context.
DEFAULT_MATERIAL_CAP = 200_000

_ID_RE = re.compile(r"^[a-z0-9][a-z0-9-]*$")


def is_valid_id(value: str) -> bool:
    """Author-visible identifiers are lowercase alphanumerics plus hyphen."""
    return bool(_ID_RE.match(value))


def new_id(prefix: str = "") -> str:
    return f"{prefix}{uuid.uuid4().hex[:8]}"


def text_key(text: str) -> str:
    """Comparison key for uniqueness rules: whitespace-collapsed, casefolded."""
    return " ".join(text.split()).casefold()


class MaterialSource(str, Enum):
    PASTED = "pasted"
    IMPORTED_FILE = "imported-file"


@dataclass(frozen=True)
class Material:
    """Source educational text plus provenance."""

    id: str
    title: str
    body: str
    source: MaterialSource
    imported_name: Optional[str] = None

    @classmethod
    def create(
        cls,
        title: str,
        body: str,
        source: MaterialSource = MaterialSource.PASTED,
        imported_name: Optional[str] = None,
        cap: int = DEFAULT_MATERIAL_CAP,
    ) -> "Material":
        if not body.strip():
            raise ValueError("material body is empty")
        if len(body) > cap:
            raise ValueError(f"material body exceeds the {cap}-character cap")
        return cls(
            id=new_id("m-"),
            title=title.strip() or "untitled",
            body=body,
            source=source,
            imported_name=imported_name,
        )


@dataclass(frozen=True)
class SessionTopic:
    """One planned session: a unique topic plus its key educational points."""

    session_id: str
    ordinal: int
    title: str
    key_points: tuple[str, ...]


@dataclass(frozen=True)
class SessionPlan:
    """Ordered decomposition of the material into session topics."""

    sessions: tuple[SessionTopic, ...]
    revision_note: Optional[str] = None

    def session_ids(self) -> list[str]:
        return [t.session_id for t in self.sessions]

    def get(self, session_id: str) -> Optional[SessionTopic]:
        for topic in self.sessions:
            if topic.session_id == session_id:
                return topic
        return None


def plan_problems(sessions: Iterable[SessionTopic]) -> list[str]:
    """Invariant check shared by the plan parser and the editing commands.

    Returns human-readable rule violations; empty means the plan is sound.
    """
    sessions = list(sessions)
    problems: list[str] = []
    if not sessions:
        problems.append("plan has no sessions")
        return problems
    seen_ids: set[str] = set()
    seen_titles: dict[str, str] = {}
    for index, topic in enumerate(sessions, start=1):
        if topic.ordinal != index:
            problems.append(f"session {topic.session_id!r} has ordinal {topic.ordinal}, expected {index}")
        if not is_valid_id(topic.session_id):
            problems.append(f"invalid session id {topic.session_id!r}")
        if topic.session_id in seen_ids:
            problems.append(f"duplicate session id {topic.session_id!r}")
        seen_ids.add(topic.session_id)
        if not topic.title.strip():
            problems.append(f"session {topic.session_id!r} has an empty topic title")
        else:
            key = text_key(topic.title)
            if key in seen_titles:
                problems.append(
                    f"duplicate topic title {topic.title!r} (also used by {seen_titles[key]!r})"
                )
            seen_titles.setdefault(key, topic.session_id)
        if not topic.key_points:
            problems.append(f"session {topic.session_id!r} has no key points")
        elif any(not point.strip() for point in topic.key_points):
            problems.append(f"session {topic.session_id!r} has a blank key point")
    return problems


@dataclass(frozen=True)
class ResponseOption:
    """A patient-facing button label with exactly one transition target.

    ``option_id`` is runtime identity for edit commands; it never appears in
    the markup, so it is excluded from structural equality.
    """

    option_id: str = field(compare=False)
    label: str
    target: str  # state-id or END


@dataclass(frozen=True)
class DialogueState:
    """One agent utterance paired with its patient response options."""

    state_id: str
    agent_utterance: str
    options: tuple[ResponseOption, ...] = ()
    is_entry: bool = False
    tags: tuple[str, ...] = ()  # uninterpreted "key=value" extension lines

    @property
    def is_terminal(self) -> bool:
        return not self.options

    def option(self, option_id: str) -> Optional[ResponseOption]:
        for opt in self.options:
            if opt.option_id == option_id:
                return opt
        return None


@dataclass(frozen=True)
class DialogueFsm:
    """One conversation: states keyed by id plus the designated entry."""

    session_id: str
    states: dict[str, DialogueState]
    entry: str

    def state(self, state_id: str) -> DialogueState:
        return self.states[state_id]

    def sorted_states(self) -> list[DialogueState]:
        return [self.states[k] for k in sorted(self.states)]

    def with_state(self, state: DialogueState) -> "DialogueFsm":
        states = dict(self.states)
        states[state.state_id] = state
        return replace(self, states=states)

    def without_state(self, state_id: str) -> "DialogueFsm":
        states = dict(self.states)
        states.pop(state_id, None)
        return replace(self, states=states)


@dataclass(frozen=True)
class Project:
    """The authoring unit: material, plan, one FSM per planned session,
    plus the edit history. A plan session without an FSM is simply
    "not yet generated"; the reverse never holds."""

    project_id: str
    material: Material
    plan: Optional[SessionPlan]
    fsms: dict[str, DialogueFsm]
    history: "EditHistory"
    created: float
    modified: float
    plan_approved: bool = False


class DefectKind(str, Enum):
    NO_ENTRY = "no-entry"
    MULTIPLE_ENTRY = "multiple-entry"
    DANGLING_TARGET = "dangling-target"
    UNREACHABLE_STATE = "unreachable-state"
    DUPLICATE_OPTION_LABEL = "duplicate-option-label"
    EMPTY_UTTERANCE = "empty-utterance"


@dataclass(frozen=True)
class Defect:
    kind: DefectKind
    location: str  # "<state-id>", "<state-id>/<option-id>", or "fsm"
    message: str


@dataclass(frozen=True)
class ValidationReport:
    defects: tuple[Defect, ...]

    @property
    def ok(self) -> bool:
        return not self.defects

    def kinds(self) -> set[DefectKind]:
        return {d.kind for d in self.defects}


def reachable_states(fsm: DialogueFsm) -> set[str]:
    """Fixed point of option-following from the entry state.

    END is a sink, not a state, so it never appears in the result.
    """
    if fsm.entry not in fsm.states:
        raise ValueError(f"entry state {fsm.entry!r} does not exist")
    seen: set[str] = set()
    frontier = [fsm.entry]
    while frontier:
        state_id = frontier.pop()
        if state_id in seen:
            continue
        seen.add(state_id)
        for opt in fsm.states[state_id].options:
            if opt.target != END and opt.target in fsm.states and opt.target not in seen:
                frontier.append(opt.target)
    return seen


def validate_fsm(fsm: DialogueFsm) -> ValidationReport:
    """List every structural defect. An empty report means all invariants
    hold: one entry, no dangling targets, full reachability, unique option
    labels per state, no empty utterances.

    Pure: equal FSMs yield identical reports, regardless of the insertion
    order of the states mapping (iteration is sorted).
    """
    defects: list[Defect] = []

    flagged = [s.state_id for s in fsm.sorted_states() if s.is_entry]
    if fsm.entry not in fsm.states:
        defects.append(
            Defect(DefectKind.NO_ENTRY, "fsm", f"entry {fsm.entry!r} refers to no state")
        )
    if not flagged:
        defects.append(Defect(DefectKind.NO_ENTRY, "fsm", "no state is flagged as entry"))
    elif len(flagged) > 1:
        defects.append(
            Defect(
                DefectKind.MULTIPLE_ENTRY,
                "fsm",
                "multiple states flagged as entry: " + ", ".join(flagged),
            )
        )
    elif fsm.entry in fsm.states and flagged[0] != fsm.entry:
        defects.append(
            Defect(
                DefectKind.NO_ENTRY,
                "fsm",
                f"declared entry {fsm.entry!r} is not flagged; {flagged[0]!r} is",
            )
        )

    for state in fsm.sorted_states():
        if not state.agent_utterance.strip():
            defects.append(
                Defect(DefectKind.EMPTY_UTTERANCE, state.state_id, "agent utterance is empty")
            )
        seen_labels: set[str] = set()
        for opt in state.options:
            key = text_key(opt.label)
            if key in seen_labels:
                defects.append(
                    Defect(
                        DefectKind.DUPLICATE_OPTION_LABEL,
                        f"{state.state_id}/{opt.option_id}",
                        f"option label {opt.label!r} repeats within state {state.state_id!r}",
                    )
                )
            seen_labels.add(key)
            if opt.target != END and opt.target not in fsm.states:
                defects.append(
                    Defect(
                        DefectKind.DANGLING_TARGET,
                        f"{state.state_id}/{opt.option_id}",
                        f"option {opt.label!r} targets unknown state {opt.target!r}",
                    )
                )

    if fsm.entry in fsm.states:
        reached = reachable_states(fsm)
        for state_id in sorted(fsm.states):
            if state_id not in reached:
                defects.append(
                    Defect(
                        DefectKind.UNREACHABLE_STATE,
                        state_id,
                        f"state {state_id!r} cannot be reached from the entry state",
                    )
                )

    return ValidationReport(tuple(defects))


@dataclass(frozen=True)
class FsmStats:
    state_count: int
    option_count: int
    terminal_count: int
    max_depth: int


def fsm_stats(fsm: DialogueFsm) -> FsmStats:
    """Counts over the reachable subgraph. ``max_depth`` is the longest
    acyclic choice sequence from the entry: each option followed counts one
    step (including options into END); a cycle contributes its first
    traversal only."""
    reached = reachable_states(fsm)
    option_count = sum(len(fsm.states[s].options) for s in reached)
    terminal_count = sum(1 for s in reached if not fsm.states[s].options)

    def deepest(state_id: str, on_path: set[str]) -> int:
        best = 0
        for opt in fsm.states[state_id].options:
            if opt.target == END:
                step = 1
            elif opt.target in on_path:
                step = 1  # cycle closes here; count the step, do not re-enter
            else:
                step = 1 + deepest(opt.target, on_path | {opt.target})
            best = max(best, step)
        return best

    return FsmStats(
        state_count=len(reached),
        option_count=option_count,
        terminal_count=terminal_count,
        max_depth=deepest(fsm.entry, {fsm.entry}),
    )


# Plain-dict converters used by the store, the HTTP API, and edit inverses.

def option_to_dict(opt: ResponseOption) -> dict:
    return {"id": opt.option_id, "label": opt.label, "target": opt.target}


def option_from_dict(data: dict) -> ResponseOption:
    return ResponseOption(option_id=data["id"], label=data["label"], target=data["target"])


def state_to_dict(state: DialogueState) -> dict:
    return {
        "id": state.state_id,
        "utterance": state.agent_utterance,
        "entry": state.is_entry,
        "options": [option_to_dict(o) for o in state.options],
        "tags": list(state.tags),
    }


def state_from_dict(data: dict) -> DialogueState:
    return DialogueState(
        state_id=data["id"],
        agent_utterance=data["utterance"],
        is_entry=bool(data.get("entry", False)),
        options=tuple(option_from_dict(o) for o in data.get("options", [])),
        tags=tuple(data.get("tags", [])),
    )


def fsm_to_dict(fsm: DialogueFsm) -> dict:
    return {
        "session_id": fsm.session_id,
        "entry": fsm.entry,
        "states": [state_to_dict(s) for s in fsm.sorted_states()],
    }


def fsm_from_dict(data: dict) -> DialogueFsm:
    states = [state_from_dict(s) for s in data.get("states", [])]
    return DialogueFsm(
        session_id=data["session_id"],
        states={s.state_id: s for s in states},
        entry=data["entry"],
    )


def plan_to_dict(plan: SessionPlan) -> dict:
    out: dict = {
        "sessions": [
            {"id": t.session_id, "topic": t.title, "key_points": list(t.key_points)}
            for t in plan.sessions
        ]
    }
    if plan.revision_note is not None:
        out["revision_note"] = plan.revision_note
    return out


def plan_from_dict(data: dict) -> SessionPlan:
    sessions = tuple(
        SessionTopic(
            session_id=item["id"],
            ordinal=index,
            title=item["topic"],
            key_points=tuple(item["key_points"]),
        )
        for index, item in enumerate(data["sessions"], start=1)
    )
    return SessionPlan(sessions=sessions, revision_note=data.get("revision_note"))
