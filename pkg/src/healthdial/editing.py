"""Command-based project mutation with undo/redo and revision telemetry.

Every change to a project's content goes through :func:`apply` as an
:class:`EditCommand`. Applying a command captures the inverse needed to undo
it and appends a content digest to the history trail, so that undo/redo are
exact and the revision counter can discount spans that return the project to
an earlier content state. Commands are recorded with fully normalized
payloads (generated ids filled in), which makes replaying a logged command
sequence reproduce the final content hash bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .exceptions import EditError
from .model import (
    END,
    DialogueFsm,
    DialogueState,
    Material,
    Project,
    ResponseOption,
    SessionPlan,
    SessionTopic,
    fsm_from_dict,
    fsm_to_dict,
    is_valid_id,
    new_id,
    option_from_dict,
    option_to_dict,
    state_from_dict,
    state_to_dict,
    text_key,
)

#: Placeholder utterance for stub states created by accepted suggestions.
STUB_UTTERANCE = "(placeholder: edit this utterance)"


class CommandKind(str, Enum):
    EDIT_UTTERANCE = "edit-utterance"
    ADD_STATE = "add-state"
    DELETE_STATE = "delete-state"
    ADD_OPTION = "add-option"
    EDIT_OPTION_LABEL = "edit-option-label"
    DELETE_OPTION = "delete-option"
    CONNECT_OPTION = "connect-option"
    REORDER_TOPICS = "reorder-topics"
    ADD_TOPIC = "add-topic"
    DELETE_TOPIC = "delete-topic"
    RENAME_TOPIC = "rename-topic"
    ACCEPT_SUGGESTION = "accept-suggestion"


#: Kinds that count toward the revision telemetry. Transition rewiring and
#: topic reordering are follow-up steps, not content revisions, and are
#: excluded from the count.
CONTENT_KINDS = frozenset(CommandKind) - {CommandKind.CONNECT_OPTION, CommandKind.REORDER_TOPICS}


@dataclass(frozen=True)
class EditCommand:
    kind: CommandKind
    payload: dict


@dataclass(frozen=True)
class AppliedCommand:
    command: EditCommand
    inverse: dict
    hash_after: str


@dataclass(frozen=True)
class EditHistory:
    """Linear undo/redo log. ``base_hash`` is the content digest of the
    project when this history began; the trail holds one digest per applied
    command."""

    base_hash: str
    applied: tuple[AppliedCommand, ...] = ()
    cursor: int = 0

    @property
    def can_undo(self) -> bool:
        return self.cursor > 0

    @property
    def can_redo(self) -> bool:
        return self.cursor < len(self.applied)

    def hash_at_cursor(self) -> str:
        if self.cursor == 0:
            return self.base_hash
        return self.applied[self.cursor - 1].hash_after


def content_hash(material: Material, plan: Optional[SessionPlan], fsms: dict[str, DialogueFsm]) -> str:
    """Digest of the author-visible project content.

    Covers exactly what export and the plan carry: option ids and timestamps
    are runtime identity, not content, and are excluded, so deleting and
    re-adding an identical option counts as a revert.
    """
    canonical = {
        "material": {
            "title": material.title,
            "body": material.body,
            "source": material.source.value,
            "imported_name": material.imported_name,
        },
        "plan": None
        if plan is None
        else {
            "revision_note": plan.revision_note,
            "sessions": [
                {"id": t.session_id, "topic": t.title, "key_points": list(t.key_points)}
                for t in plan.sessions
            ],
        },
        "fsms": {
            sid: {
                "entry": fsm.entry,
                "states": {
                    s.state_id: {
                        "utterance": s.agent_utterance,
                        "entry": s.is_entry,
                        "options": [{"label": o.label, "target": o.target} for o in s.options],
                        "tags": list(s.tags),
                    }
                    for s in fsm.states.values()
                },
            }
            for sid, fsm in fsms.items()
        },
    }
    blob = json.dumps(canonical, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def project_hash(project: Project) -> str:
    return content_hash(project.material, project.plan, project.fsms)


def fresh_history(project_hashable: str) -> EditHistory:
    return EditHistory(base_hash=project_hashable)


# --- apply -------------------------------------------------------------------


def _need(payload: dict, *names: str) -> list:
    missing = [n for n in names if n not in payload]
    if missing:
        raise EditError("invalid-payload", f"payload is missing field(s): {', '.join(missing)}")
    return [payload[n] for n in names]


def _get_fsm(project: Project, session_id: str) -> DialogueFsm:
    fsm = project.fsms.get(session_id)
    if fsm is None:
        raise EditError("unknown-target", f"no dialogue exists for session {session_id!r}")
    return fsm


def _get_state(fsm: DialogueFsm, state_id: str) -> DialogueState:
    state = fsm.states.get(state_id)
    if state is None:
        raise EditError("unknown-target", f"no state {state_id!r} in session {fsm.session_id!r}")
    return state


def _get_option(state: DialogueState, option_id: str) -> ResponseOption:
    opt = state.option(option_id)
    if opt is None:
        raise EditError("unknown-target", f"no option {option_id!r} in state {state.state_id!r}")
    return opt


def _check_target(fsm: DialogueFsm, target: str) -> None:
    if target != END and target not in fsm.states:
        raise EditError("unknown-target", f"transition target {target!r} does not exist (use END to finish)")


def _check_label(state: DialogueState, label: str, ignore_option_id: Optional[str] = None) -> None:
    if not label.strip():
        raise EditError("invalid-payload", "option label is empty")
    key = text_key(label)
    for opt in state.options:
        if opt.option_id != ignore_option_id and text_key(opt.label) == key:
            raise EditError("duplicate-label", f"state {state.state_id!r} already has an option labeled {label!r}")


def _require_plan(project: Project) -> SessionPlan:
    if project.plan is None:
        raise EditError("unknown-target", "project has no session plan yet")
    return project.plan


def _renumber(sessions: list[SessionTopic]) -> tuple[SessionTopic, ...]:
    return tuple(replace(t, ordinal=i) for i, t in enumerate(sessions, start=1))


def _check_topic_title(plan: Optional[SessionPlan], title: str, ignore_session_id: Optional[str] = None) -> None:
    if not title.strip():
        raise EditError("invalid-payload", "topic title is empty")
    if plan is None:
        return
    key = text_key(title)
    for topic in plan.sessions:
        if topic.session_id != ignore_session_id and text_key(topic.title) == key:
            raise EditError("duplicate-label", f"a session titled {title!r} already exists")


def _fresh_state_id(fsm: DialogueFsm) -> str:
    while True:
        candidate = new_id("st-")
        if candidate not in fsm.states:
            return candidate


def _apply_content(project: Project, command: EditCommand) -> tuple[dict, Optional[SessionPlan], dict[str, DialogueFsm], dict]:
    """Run one command against the project content.

    Returns (normalized payload, new plan, new fsms, inverse payload).
    Raises EditError without touching anything on any precondition failure.
    """
    kind = command.kind
    payload = dict(command.payload)
    plan = project.plan
    fsms = dict(project.fsms)
    inverse: dict = {}

    if kind is CommandKind.EDIT_UTTERANCE:
        session_id, state_id, text = _need(payload, "session_id", "state_id", "text")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        if not str(text).strip():
            raise EditError("invalid-payload", "agent utterance must not be empty")
        inverse = {"text": state.agent_utterance}
        fsms[session_id] = fsm.with_state(replace(state, agent_utterance=str(text)))

    elif kind is CommandKind.ADD_STATE:
        session_id, utterance = _need(payload, "session_id", "utterance")
        fsm = _get_fsm(project, session_id)
        if not str(utterance).strip():
            raise EditError("invalid-payload", "agent utterance must not be empty")
        state_id = payload.get("state_id") or _fresh_state_id(fsm)
        if not is_valid_id(state_id):
            raise EditError("invalid-payload", f"invalid state id {state_id!r}")
        if state_id in fsm.states:
            raise EditError("invalid-payload", f"state id {state_id!r} already exists")
        payload["state_id"] = state_id
        make_entry = bool(payload.get("entry", False))
        new_state = DialogueState(state_id=state_id, agent_utterance=str(utterance), is_entry=make_entry)
        fsm = fsm.with_state(new_state)
        if make_entry:
            # Re-designating the entry: demote the old one atomically.
            inverse = {"entry_before": project.fsms[session_id].entry}
            old = fsm.states[fsm.entry]
            fsm = fsm.with_state(replace(old, is_entry=False))
            fsm = replace(fsm, entry=state_id)
        fsms[session_id] = fsm

    elif kind is CommandKind.DELETE_STATE:
        session_id, state_id = _need(payload, "session_id", "state_id")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        if state_id == fsm.entry:
            raise EditError(
                "would-orphan-entry",
                "deleting the entry state is refused; designate a new entry first",
            )
        inbound: list[dict] = []
        for other_id in sorted(fsm.states):
            if other_id == state_id:
                continue
            other = fsm.states[other_id]
            kept = []
            for index, opt in enumerate(other.options):
                if opt.target == state_id:
                    inbound.append({"state_id": other_id, "index": index, "option": option_to_dict(opt)})
                else:
                    kept.append(opt)
            if len(kept) != len(other.options):
                fsm = fsm.with_state(replace(other, options=tuple(kept)))
        inverse = {"state": state_to_dict(state), "inbound": inbound}
        fsms[session_id] = fsm.without_state(state_id)

    elif kind is CommandKind.ADD_OPTION:
        session_id, state_id, label, target = _need(payload, "session_id", "state_id", "label", "target")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        _check_target(fsm, target)
        _check_label(state, str(label))
        option_id = payload.get("option_id") or new_id("op-")
        payload["option_id"] = option_id
        new_opt = ResponseOption(option_id=option_id, label=str(label), target=target)
        fsms[session_id] = fsm.with_state(replace(state, options=state.options + (new_opt,)))

    elif kind is CommandKind.EDIT_OPTION_LABEL:
        session_id, state_id, option_id, label = _need(payload, "session_id", "state_id", "option_id", "label")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        opt = _get_option(state, option_id)
        _check_label(state, str(label), ignore_option_id=option_id)
        inverse = {"label": opt.label}
        new_options = tuple(replace(o, label=str(label)) if o.option_id == option_id else o for o in state.options)
        fsms[session_id] = fsm.with_state(replace(state, options=new_options))

    elif kind is CommandKind.DELETE_OPTION:
        session_id, state_id, option_id = _need(payload, "session_id", "state_id", "option_id")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        opt = _get_option(state, option_id)
        index = state.options.index(opt)
        inverse = {"index": index, "option": option_to_dict(opt)}
        fsms[session_id] = fsm.with_state(
            replace(state, options=tuple(o for o in state.options if o.option_id != option_id))
        )

    elif kind is CommandKind.CONNECT_OPTION:
        session_id, state_id, option_id, target = _need(payload, "session_id", "state_id", "option_id", "target")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        opt = _get_option(state, option_id)
        _check_target(fsm, target)
        inverse = {"target": opt.target}
        new_options = tuple(replace(o, target=target) if o.option_id == option_id else o for o in state.options)
        fsms[session_id] = fsm.with_state(replace(state, options=new_options))

    elif kind is CommandKind.REORDER_TOPICS:
        (order,) = _need(payload, "order")
        current = _require_plan(project)
        if sorted(order) != sorted(current.session_ids()) or len(order) != len(set(order)):
            raise EditError("invalid-payload", "order must be a permutation of the current session ids")
        inverse = {"order": current.session_ids()}
        by_id = {t.session_id: t for t in current.sessions}
        plan = replace(current, sessions=_renumber([by_id[sid] for sid in order]))

    elif kind is CommandKind.ADD_TOPIC:
        title, key_points = _need(payload, "title", "key_points")
        if not isinstance(key_points, list) or not key_points or any(not str(p).strip() for p in key_points):
            raise EditError("invalid-payload", "key_points must be a non-empty list of non-empty strings")
        _check_topic_title(plan, str(title))
        session_id = payload.get("session_id") or new_id("t-")
        if not is_valid_id(session_id):
            raise EditError("invalid-payload", f"invalid session id {session_id!r}")
        if plan is not None and plan.get(session_id) is not None:
            raise EditError("invalid-payload", f"session id {session_id!r} already exists")
        payload["session_id"] = session_id
        topic = SessionTopic(
            session_id=session_id,
            ordinal=(len(plan.sessions) + 1) if plan else 1,
            title=str(title),
            key_points=tuple(str(p) for p in key_points),
        )
        if plan is None:
            inverse = {"plan_was_none": True}
            plan = SessionPlan(sessions=(topic,))
        else:
            inverse = {"plan_was_none": False}
            plan = replace(plan, sessions=plan.sessions + (topic,))

    elif kind is CommandKind.DELETE_TOPIC:
        (session_id,) = _need(payload, "session_id")
        current = _require_plan(project)
        topic = current.get(session_id)
        if topic is None:
            raise EditError("unknown-target", f"no session {session_id!r} in the plan")
        index = current.sessions.index(topic)
        removed_fsm = fsms.pop(session_id, None)
        inverse = {
            "index": index,
            "topic": {"id": topic.session_id, "topic": topic.title, "key_points": list(topic.key_points)},
            "fsm": fsm_to_dict(removed_fsm) if removed_fsm is not None else None,
            "revision_note": current.revision_note,
        }
        remaining = [t for t in current.sessions if t.session_id != session_id]
        plan = replace(current, sessions=_renumber(remaining)) if remaining else None

    elif kind is CommandKind.RENAME_TOPIC:
        session_id, title = _need(payload, "session_id", "title")
        current = _require_plan(project)
        topic = current.get(session_id)
        if topic is None:
            raise EditError("unknown-target", f"no session {session_id!r} in the plan")
        _check_topic_title(current, str(title), ignore_session_id=session_id)
        inverse = {"title": topic.title}
        plan = replace(
            current,
            sessions=tuple(replace(t, title=str(title)) if t.session_id == session_id else t for t in current.sessions),
        )

    elif kind is CommandKind.ACCEPT_SUGGESTION:
        session_id, state_id, label, attach = _need(payload, "session_id", "state_id", "label", "attach")
        fsm = _get_fsm(project, session_id)
        state = _get_state(fsm, state_id)
        _check_label(state, str(label))
        option_id = payload.get("option_id") or new_id("op-")
        payload["option_id"] = option_id
        if attach == "existing":
            (target,) = _need(payload, "target")
            _check_target(fsm, target)
            inverse = {"created_state": None}
        elif attach == "new-stub":
            target = payload.get("new_state_id") or _fresh_state_id(fsm)
            if not is_valid_id(target) or target in fsm.states:
                raise EditError("invalid-payload", f"unusable stub state id {target!r}")
            payload["new_state_id"] = target
            stub = DialogueState(
                state_id=target,
                agent_utterance=str(payload.get("stub_utterance") or STUB_UTTERANCE),
            )
            fsm = fsm.with_state(stub)
            inverse = {"created_state": target}
        else:
            raise EditError("invalid-payload", "attach must be 'existing' or 'new-stub'")
        new_opt = ResponseOption(option_id=option_id, label=str(label), target=target)
        fsm = fsm.with_state(replace(fsm.states[state_id], options=state.options + (new_opt,)))
        fsms[session_id] = fsm

    else:  # pragma: no cover - the enum is closed
        raise EditError("invalid-payload", f"unknown command kind {kind!r}")

    return payload, plan, fsms, inverse


def apply(project: Project, command: EditCommand, *, now: Optional[float] = None) -> Project:
    """Apply one command. Returns the updated project with the command (and
    its captured inverse) appended to the history; the redo branch, if any,
    is truncated."""
    payload, plan, fsms, inverse = _apply_content(project, command)
    updated = replace(
        project,
        plan=plan,
        fsms=fsms,
        modified=now if now is not None else time.time(),
    )
    digest = project_hash(updated)
    history = project.history
    applied = history.applied[: history.cursor] + (
        AppliedCommand(EditCommand(command.kind, payload), inverse, digest),
    )
    return replace(updated, history=replace(history, applied=applied, cursor=len(applied)))


# --- undo / redo -------------------------------------------------------------


def _apply_inverse(plan: Optional[SessionPlan], fsms: dict[str, DialogueFsm], entry: AppliedCommand) -> tuple[Optional[SessionPlan], dict[str, DialogueFsm]]:
    kind = entry.command.kind
    payload = entry.command.payload
    inverse = entry.inverse
    fsms = dict(fsms)

    if kind is CommandKind.EDIT_UTTERANCE:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        fsms[payload["session_id"]] = fsm.with_state(replace(state, agent_utterance=inverse["text"]))

    elif kind is CommandKind.ADD_STATE:
        fsm = fsms[payload["session_id"]].without_state(payload["state_id"])
        if "entry_before" in inverse:
            old = fsm.states[inverse["entry_before"]]
            fsm = replace(fsm.with_state(replace(old, is_entry=True)), entry=inverse["entry_before"])
        fsms[payload["session_id"]] = fsm

    elif kind is CommandKind.DELETE_STATE:
        fsm = fsms[payload["session_id"]].with_state(state_from_dict(inverse["state"]))
        for record in inverse["inbound"]:
            holder = fsm.states[record["state_id"]]
            options = list(holder.options)
            options.insert(record["index"], option_from_dict(record["option"]))
            fsm = fsm.with_state(replace(holder, options=tuple(options)))
        fsms[payload["session_id"]] = fsm

    elif kind is CommandKind.ADD_OPTION:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        fsms[payload["session_id"]] = fsm.with_state(
            replace(state, options=tuple(o for o in state.options if o.option_id != payload["option_id"]))
        )

    elif kind is CommandKind.EDIT_OPTION_LABEL:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        options = tuple(
            replace(o, label=inverse["label"]) if o.option_id == payload["option_id"] else o
            for o in state.options
        )
        fsms[payload["session_id"]] = fsm.with_state(replace(state, options=options))

    elif kind is CommandKind.DELETE_OPTION:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        options = list(state.options)
        options.insert(inverse["index"], option_from_dict(inverse["option"]))
        fsms[payload["session_id"]] = fsm.with_state(replace(state, options=tuple(options)))

    elif kind is CommandKind.CONNECT_OPTION:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        options = tuple(
            replace(o, target=inverse["target"]) if o.option_id == payload["option_id"] else o
            for o in state.options
        )
        fsms[payload["session_id"]] = fsm.with_state(replace(state, options=options))

    elif kind is CommandKind.REORDER_TOPICS:
        assert plan is not None
        by_id = {t.session_id: t for t in plan.sessions}
        plan = replace(plan, sessions=_renumber([by_id[sid] for sid in inverse["order"]]))

    elif kind is CommandKind.ADD_TOPIC:
        assert plan is not None
        remaining = [t for t in plan.sessions if t.session_id != payload["session_id"]]
        plan = None if inverse.get("plan_was_none") else replace(plan, sessions=_renumber(remaining))

    elif kind is CommandKind.DELETE_TOPIC:
        topic_data = inverse["topic"]
        topic = SessionTopic(
            session_id=topic_data["id"],
            ordinal=0,  # renumbered below
            title=topic_data["topic"],
            key_points=tuple(topic_data["key_points"]),
        )
        sessions = list(plan.sessions) if plan is not None else []
        sessions.insert(inverse["index"], topic)
        note = plan.revision_note if plan is not None else inverse.get("revision_note")
        plan = SessionPlan(sessions=_renumber(sessions), revision_note=note)
        if inverse["fsm"] is not None:
            fsms[topic.session_id] = fsm_from_dict(inverse["fsm"])

    elif kind is CommandKind.RENAME_TOPIC:
        assert plan is not None
        plan = replace(
            plan,
            sessions=tuple(
                replace(t, title=inverse["title"]) if t.session_id == payload["session_id"] else t
                for t in plan.sessions
            ),
        )

    elif kind is CommandKind.ACCEPT_SUGGESTION:
        fsm = fsms[payload["session_id"]]
        state = fsm.states[payload["state_id"]]
        fsm = fsm.with_state(
            replace(state, options=tuple(o for o in state.options if o.option_id != payload["option_id"]))
        )
        if inverse.get("created_state"):
            fsm = fsm.without_state(inverse["created_state"])
        fsms[payload["session_id"]] = fsm

    return plan, fsms


def undo(project: Project, *, now: Optional[float] = None) -> Project:
    history = project.history
    if not history.can_undo:
        raise EditError("nothing-to-undo", "there is nothing to undo")
    entry = history.applied[history.cursor - 1]
    plan, fsms = _apply_inverse(project.plan, project.fsms, entry)
    updated = replace(
        project,
        plan=plan,
        fsms=fsms,
        modified=now if now is not None else time.time(),
        history=replace(history, cursor=history.cursor - 1),
    )
    expected = updated.history.hash_at_cursor()
    actual = project_hash(updated)
    if actual != expected:  # invariant: undo restores the recorded digest
        raise RuntimeError(f"undo hash mismatch: {actual} != {expected}")
    return updated


def redo(project: Project, *, now: Optional[float] = None) -> Project:
    history = project.history
    if not history.can_redo:
        raise EditError("nothing-to-redo", "there is nothing to redo")
    entry = history.applied[history.cursor]
    _, plan, fsms, _ = _apply_content(project, entry.command)
    updated = replace(
        project,
        plan=plan,
        fsms=fsms,
        modified=now if now is not None else time.time(),
        history=replace(history, cursor=history.cursor + 1),
    )
    actual = project_hash(updated)
    if actual != entry.hash_after:  # invariant: redo reproduces the recorded digest
        raise RuntimeError(f"redo hash mismatch: {actual} != {entry.hash_after}")
    return updated


# --- revision telemetry --------------------------------------------------------


def revision_count(history: EditHistory) -> int:
    """Number of content revisions in the live part of the log.

    Counts commands of the content kinds only; transition connections and
    topic reordering are excluded. Whenever the digest after a command equals
    any earlier digest in the trail, every command inside that span is
    discounted as reverted.
    """
    live = history.applied[: history.cursor]
    trail = [history.base_hash] + [entry.hash_after for entry in live]
    discounted = [False] * len(live)
    first_seen: dict[str, int] = {}
    for position, digest in enumerate(trail):
        earlier = first_seen.get(digest)
        if earlier is not None:
            for index in range(earlier, position):
                discounted[index] = True
        else:
            first_seen[digest] = position
    return sum(
        1
        for index, entry in enumerate(live)
        if entry.command.kind in CONTENT_KINDS and not discounted[index]
    )
