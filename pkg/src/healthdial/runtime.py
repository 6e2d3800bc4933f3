"""Deterministic playthrough engine: test a dialogue as the patient would
experience it, one utterance and one choice at a time, without any agent
rendering. Play sessions are immutable snapshots; any number may run
concurrently over the same project."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .exceptions import PlayError
from .model import END, DialogueFsm, Project, SessionPlan, new_id, validate_fsm


@dataclass(frozen=True)
class TranscriptEntry:
    """One visited state: the agent's utterance plus the label the patient
    chose to leave it (None while current or terminal)."""

    state_id: str
    agent_utterance: str
    chosen_label: Optional[str] = None


@dataclass(frozen=True)
class PlaySession:
    play_id: str
    project_id: str
    session_id: str
    fsm: DialogueFsm = field(compare=False)
    current: str  # state-id, or END once the conversation is over
    transcript: tuple[TranscriptEntry, ...]
    finished: bool

    def current_options(self) -> list[str]:
        if self.finished or self.current == END:
            return []
        return [opt.label for opt in self.fsm.states[self.current].options]


def start(project: Project, session_id: str) -> PlaySession:
    """Begin a playthrough at the entry state; its utterance is emitted as
    the first transcript entry. Replays always start over from the entry."""
    fsm = project.fsms.get(session_id)
    if fsm is None:
        raise PlayError("unknown-session", f"no dialogue exists for session {session_id!r}")
    report = validate_fsm(fsm)
    if not report.ok:
        raise PlayError(
            "invalid-fsm",
            f"dialogue {session_id!r} has {len(report.defects)} validation defect(s); fix them before playing",
        )
    entry_state = fsm.states[fsm.entry]
    return PlaySession(
        play_id=new_id("play-"),
        project_id=project.project_id,
        session_id=session_id,
        fsm=fsm,
        current=fsm.entry,
        transcript=(TranscriptEntry(entry_state.state_id, entry_state.agent_utterance),),
        finished=entry_state.is_terminal,
    )


def choose(play: PlaySession, option_index: int) -> PlaySession:
    """Take the option at ``option_index`` in the current state, appending
    the choice (and the next utterance, if any) to the transcript."""
    if play.finished:
        raise PlayError("already-finished", "the conversation is already over")
    state = play.fsm.states[play.current]
    if option_index < 0 or option_index >= len(state.options):
        raise PlayError(
            "out-of-range",
            f"option index {option_index} is out of range for state {state.state_id!r} "
            f"({len(state.options)} option(s))",
        )
    option = state.options[option_index]
    transcript = play.transcript[:-1] + (replace(play.transcript[-1], chosen_label=option.label),)
    if option.target == END:
        return replace(play, current=END, transcript=transcript, finished=True)
    next_state = play.fsm.states[option.target]
    transcript = transcript + (TranscriptEntry(next_state.state_id, next_state.agent_utterance),)
    return replace(play, current=next_state.state_id, transcript=transcript, finished=next_state.is_terminal)


def transcript_jsonl(play: PlaySession) -> str:
    """Export the transcript as JSON lines, one speaker turn per line."""
    lines = []
    for entry in play.transcript:
        lines.append(json.dumps({"speaker": "agent", "text": entry.agent_utterance, "state_id": entry.state_id}))
        if entry.chosen_label is not None:
            lines.append(json.dumps({"speaker": "patient", "text": entry.chosen_label, "state_id": entry.state_id}))
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class PlayPath:
    """One complete (or step-capped) choice sequence through a dialogue."""

    choices: tuple[int, ...]
    transcript: tuple[TranscriptEntry, ...]
    truncated: bool


def enumerate_paths(fsm: DialogueFsm, max_steps: int = 50) -> list[PlayPath]:
    """Every distinct choice sequence through the dialogue, in depth-first
    option order. Cycles are allowed; a path is marked truncated once it has
    taken ``max_steps`` choices without finishing."""
    entry_state = fsm.states[fsm.entry]
    paths: list[PlayPath] = []

    def walk(state_id: str, choices: tuple[int, ...], transcript: tuple[TranscriptEntry, ...]) -> None:
        state = fsm.states[state_id]
        if state.is_terminal:
            paths.append(PlayPath(choices, transcript, truncated=False))
            return
        if len(choices) >= max_steps:
            paths.append(PlayPath(choices, transcript, truncated=True))
            return
        for index, option in enumerate(state.options):
            taken = transcript[:-1] + (replace(transcript[-1], chosen_label=option.label),)
            if option.target == END:
                paths.append(PlayPath(choices + (index,), taken, truncated=False))
            else:
                next_state = fsm.states[option.target]
                walk(
                    option.target,
                    choices + (index,),
                    taken + (TranscriptEntry(next_state.state_id, next_state.agent_utterance),),
                )

    walk(fsm.entry, (), (TranscriptEntry(entry_state.state_id, entry_state.agent_utterance),))
    return paths


class SessionStatus(str, Enum):
    NOT_STARTED = "not-started"
    IN_PROGRESS = "in-progress"
    COMPLETED = "completed"


@dataclass
class ProgressLedger:
    """Per-project record of how far the patient has come. Statuses only
    ever move forward: completed never regresses."""

    statuses: dict[str, SessionStatus] = field(default_factory=dict)
    updated: dict[str, float] = field(default_factory=dict)

    def status(self, session_id: str) -> SessionStatus:
        return self.statuses.get(session_id, SessionStatus.NOT_STARTED)

    def mark_started(self, session_id: str, *, now: Optional[float] = None) -> None:
        if self.status(session_id) is SessionStatus.NOT_STARTED:
            self.statuses[session_id] = SessionStatus.IN_PROGRESS
            self.updated[session_id] = now if now is not None else time.time()

    def mark_completed(self, session_id: str, *, now: Optional[float] = None) -> None:
        if self.status(session_id) is not SessionStatus.COMPLETED:
            self.statuses[session_id] = SessionStatus.COMPLETED
            self.updated[session_id] = now if now is not None else time.time()

    def can_start(self, plan: SessionPlan, session_id: str, *, free_order: bool = False) -> bool:
        """Sessions unlock in plan order unless free ordering is configured."""
        if free_order:
            return True
        for topic in plan.sessions:
            if topic.session_id == session_id:
                return True
            if self.status(topic.session_id) is not SessionStatus.COMPLETED:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            sid: {"status": status.value, "updated": self.updated.get(sid)}
            for sid, status in self.statuses.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProgressLedger":
        ledger = cls()
        for sid, record in (data or {}).items():
            ledger.statuses[sid] = SessionStatus(record["status"])
            if record.get("updated") is not None:
                ledger.updated[sid] = record["updated"]
        return ledger
