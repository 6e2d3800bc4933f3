"""Reader and writer for the dialogue markup format (``.hdfsm``).

The format is line-oriented UTF-8. ``#`` starts a comment outside quoted
strings. Strings are double-quoted with ``\\"`` ``\\\\`` ``\\n`` ``\\t``
escapes. Indentation is cosmetic: a STATE block is closed by the next STATE,
DIALOGUE, or end of input. Exactly one state per DIALOGUE carries ENTRY.
``END`` is the reserved conversation sink. ``CALL`` is reserved for future
sub-dialogue frames and rejected in v1.

::

    HEALTHDIAL-FSM v1
    DIALOGUE <session-id> "<topic title>"
      STATE <state-id> [ENTRY]
        AGENT "<utterance>"
        OPTION "<label>" -> <state-id | END>
        TAG <key>=<value>

TAG lines are parsed and preserved verbatim but never interpreted; they are
the extension point for nonverbal behavior annotations.

Parsing is strict: a document is rejected unless every dialogue in it passes
:func:`healthdial.model.validate_fsm` with an empty report. Serialization is
canonical: states sorted by id, two-space indents, no tabs, LF line endings,
exactly one trailing newline. ``parse(serialize(doc))`` is structurally equal
to ``doc`` for every valid document.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .exceptions import ParseFailure, SerializeError
from .model import (
    END,
    DialogueFsm,
    DialogueState,
    ResponseOption,
    SessionPlan,
    SessionTopic,
    is_valid_id,
    plan_problems,
    reachable_states,
    text_key,
    validate_fsm,
)

FORMAT_NAME = "HEALTHDIAL-FSM"
FORMAT_VERSION = "v1"
SUPPORTED_VERSIONS = (FORMAT_VERSION,)
FILE_EXTENSION = ".hdfsm"

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}
_UNESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t"}


class ParseErrorKind(str, Enum):
    SYNTAX = "syntax"
    DUPLICATE_STATE = "duplicate-state"
    DANGLING_TARGET = "dangling-target"
    MISSING_ENTRY = "missing-entry"
    BAD_ESCAPE = "bad-escape"
    UNSUPPORTED_VERSION = "unsupported-version"


@dataclass(frozen=True)
class ParseError:
    line: int  # 1-based
    column: int  # 1-based
    kind: ParseErrorKind
    message: str


@dataclass(frozen=True)
class Header:
    format_name: str
    version: str


@dataclass(frozen=True)
class DialogueEntry:
    title: str
    fsm: DialogueFsm


@dataclass(frozen=True)
class MarkupDocument:
    header: Header
    dialogues: tuple[DialogueEntry, ...]


def document_for(dialogues: list[tuple[str, DialogueFsm]]) -> MarkupDocument:
    """Build a v1 document from (title, fsm) pairs in session order."""
    return MarkupDocument(
        header=Header(FORMAT_NAME, FORMAT_VERSION),
        dialogues=tuple(DialogueEntry(title=t, fsm=f) for t, f in dialogues),
    )


# --- parsing -----------------------------------------------------------------


@dataclass
class _OptionLine:
    label: str
    target: str
    line: int
    column: int


@dataclass
class _StateBlock:
    state_id: str
    line: int
    entry_flag: bool
    utterance: Optional[str] = None
    utterance_line: int = 0
    options: list[_OptionLine] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)


@dataclass
class _DialogueBlock:
    session_id: str
    title: str
    line: int
    states: dict[str, _StateBlock] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)


def _strip_comment(line: str) -> str:
    out: list[str] = []
    in_string = False
    escaped = False
    for ch in line:
        if in_string:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        else:
            if ch == "#":
                break
            out.append(ch)
            if ch == '"':
                in_string = True
    return "".join(out)


class _LineScanner:
    """Token reader over one comment-stripped line, tracking 1-based columns."""

    def __init__(self, text: str, line_no: int, errors: list[ParseError]):
        self.text = text
        self.line_no = line_no
        self.pos = 0
        self.errors = errors

    @property
    def column(self) -> int:
        return self.pos + 1

    def error(self, kind: ParseErrorKind, message: str, column: Optional[int] = None) -> None:
        self.errors.append(ParseError(self.line_no, column or self.column, kind, message))

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def word(self) -> Optional[str]:
        self.skip_ws()
        match = re.match(r"[^\s\"]+", self.text[self.pos :])
        if not match:
            return None
        self.pos += match.end()
        return match.group(0)

    def quoted(self) -> Optional[str]:
        """Read one double-quoted string, decoding escapes. Returns None and
        records an error when the string is missing or malformed."""
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != '"':
            self.error(ParseErrorKind.SYNTAX, 'expected a double-quoted string')
            return None
        start_col = self.column
        self.pos += 1
        out: list[str] = []
        ok = True
        while True:
            if self.pos >= len(self.text):
                self.error(ParseErrorKind.SYNTAX, "unterminated string", start_col)
                return None
            ch = self.text[self.pos]
            if ch == '"':
                self.pos += 1
                return "".join(out) if ok else None
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    self.error(ParseErrorKind.SYNTAX, "unterminated string", start_col)
                    return None
                esc = self.text[self.pos + 1]
                if esc in _ESCAPES:
                    out.append(_ESCAPES[esc])
                else:
                    self.error(
                        ParseErrorKind.BAD_ESCAPE,
                        f"unknown escape '\\{esc}'",
                        self.column,
                    )
                    ok = False
                self.pos += 2
            else:
                out.append(ch)
                self.pos += 1

    def expect_end(self) -> None:
        if not self.at_end():
            self.error(ParseErrorKind.SYNTAX, f"unexpected trailing text {self.text[self.pos:].strip()!r}")


def parse(text: str) -> MarkupDocument:
    """Parse a full document. Raises :class:`ParseFailure` carrying every
    error found, with 1-based line/column positions inside the input."""
    errors: list[ParseError] = []
    lines = text.split("\n")
    stripped = [(_strip_comment(raw.rstrip("\r"))) for raw in lines]

    dialogues: list[_DialogueBlock] = []
    header: Optional[Header] = None
    current_dialogue: Optional[_DialogueBlock] = None
    current_state: Optional[_StateBlock] = None
    seen_session_ids: set[str] = set()

    for line_no, content in enumerate(stripped, start=1):
        if not content.strip():
            continue
        scanner = _LineScanner(content, line_no, errors)

        if header is None:
            scanner.skip_ws()
            keyword = scanner.word()
            if keyword != FORMAT_NAME:
                errors.append(
                    ParseError(
                        line_no,
                        1,
                        ParseErrorKind.SYNTAX,
                        f"first line must be the format header '{FORMAT_NAME} {FORMAT_VERSION}'",
                    )
                )
                break
            version = scanner.word()
            if version is None:
                scanner.error(ParseErrorKind.SYNTAX, "missing format version")
                break
            if version not in SUPPORTED_VERSIONS:
                errors.append(
                    ParseError(
                        line_no,
                        1,
                        ParseErrorKind.UNSUPPORTED_VERSION,
                        f"unsupported version {version!r}; supported: {', '.join(SUPPORTED_VERSIONS)}",
                    )
                )
                break
            scanner.expect_end()
            header = Header(FORMAT_NAME, version)
            continue

        scanner.skip_ws()
        keyword_col = scanner.column
        keyword = scanner.word()
        if keyword is None:
            scanner.error(ParseErrorKind.SYNTAX, "expected a keyword")
            continue

        if keyword == "DIALOGUE":
            session_id = scanner.word()
            if session_id is None or not is_valid_id(session_id):
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"DIALOGUE needs a lowercase alphanumeric-or-hyphen id, got {session_id!r}",
                )
                current_dialogue = None
                current_state = None
                continue
            title = scanner.quoted()
            scanner.expect_end()
            if title is None:
                current_dialogue = None
                current_state = None
                continue
            if session_id in seen_session_ids:
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"duplicate dialogue id {session_id!r}",
                    keyword_col,
                )
                current_dialogue = None
                current_state = None
                continue
            seen_session_ids.add(session_id)
            current_dialogue = _DialogueBlock(session_id=session_id, title=title, line=line_no)
            current_state = None
            dialogues.append(current_dialogue)

        elif keyword == "STATE":
            if current_dialogue is None:
                scanner.error(ParseErrorKind.SYNTAX, "STATE outside of a DIALOGUE", keyword_col)
                continue
            state_id = scanner.word()
            if state_id is None or not is_valid_id(state_id):
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"STATE needs a lowercase alphanumeric-or-hyphen id, got {state_id!r}",
                )
                current_state = None
                continue
            entry_flag = False
            trailing = scanner.word()
            if trailing == "ENTRY":
                entry_flag = True
                trailing = scanner.word()
            if trailing is not None:
                scanner.error(ParseErrorKind.SYNTAX, f"unexpected token {trailing!r} after STATE")
            if state_id in current_dialogue.states:
                scanner.error(
                    ParseErrorKind.DUPLICATE_STATE,
                    f"duplicate state id {state_id!r} in dialogue {current_dialogue.session_id!r}",
                    keyword_col,
                )
                current_state = None
                continue
            if entry_flag and any(s.entry_flag for s in current_dialogue.states.values()):
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"second ENTRY in dialogue {current_dialogue.session_id!r}",
                    keyword_col,
                )
                entry_flag = False
            current_state = _StateBlock(state_id=state_id, line=line_no, entry_flag=entry_flag)
            current_dialogue.states[state_id] = current_state
            current_dialogue.order.append(state_id)

        elif keyword == "AGENT":
            if current_state is None:
                scanner.error(ParseErrorKind.SYNTAX, "AGENT outside of a STATE", keyword_col)
                continue
            utterance = scanner.quoted()
            scanner.expect_end()
            if utterance is None:
                continue
            if current_state.utterance is not None:
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"state {current_state.state_id!r} already has an AGENT line",
                    keyword_col,
                )
                continue
            if not utterance.strip():
                scanner.error(ParseErrorKind.SYNTAX, "agent utterance is empty", keyword_col)
                continue
            current_state.utterance = utterance
            current_state.utterance_line = line_no

        elif keyword == "OPTION":
            if current_state is None:
                scanner.error(ParseErrorKind.SYNTAX, "OPTION outside of a STATE", keyword_col)
                continue
            label = scanner.quoted()
            if label is None:
                continue
            scanner.skip_ws()
            if not scanner.text[scanner.pos :].startswith("->"):
                scanner.error(ParseErrorKind.SYNTAX, "expected '->' after the option label")
                continue
            scanner.pos += 2
            scanner.skip_ws()
            target_col = scanner.column
            target = scanner.word()
            scanner.expect_end()
            if target is None or (target != END and not is_valid_id(target)):
                scanner.error(
                    ParseErrorKind.SYNTAX,
                    f"option target must be a state id or END, got {target!r}",
                    target_col,
                )
                continue
            if not label.strip():
                scanner.error(ParseErrorKind.SYNTAX, "option label is empty", keyword_col)
                continue
            current_state.options.append(_OptionLine(label, target, line_no, target_col))

        elif keyword == "TAG":
            if current_state is None:
                scanner.error(ParseErrorKind.SYNTAX, "TAG outside of a STATE", keyword_col)
                continue
            raw = scanner.text[scanner.pos :].strip()
            if "=" not in raw or not raw.split("=", 1)[0].strip():
                scanner.error(ParseErrorKind.SYNTAX, "TAG needs the form key=value", keyword_col)
                continue
            if "\t" in raw:
                scanner.error(ParseErrorKind.SYNTAX, "tab character in TAG value", keyword_col)
                continue
            current_state.tags.append(raw)

        elif keyword == "CALL":
            scanner.error(
                ParseErrorKind.SYNTAX, "CALL is reserved syntax and not part of v1", keyword_col
            )

        else:
            scanner.error(ParseErrorKind.SYNTAX, f"unknown keyword {keyword!r}", keyword_col)

    if header is None and not errors:
        errors.append(ParseError(1, 1, ParseErrorKind.SYNTAX, "empty document"))

    entries: list[DialogueEntry] = []
    for block in dialogues:
        entries_errors_before = len(errors)
        if not any(s.entry_flag for s in block.states.values()):
            errors.append(
                ParseError(
                    block.line,
                    1,
                    ParseErrorKind.MISSING_ENTRY,
                    f"dialogue {block.session_id!r} has no ENTRY state",
                )
            )
        for state_id in block.order:
            state = block.states[state_id]
            if state.utterance is None:
                errors.append(
                    ParseError(
                        state.line,
                        1,
                        ParseErrorKind.SYNTAX,
                        f"state {state_id!r} has no AGENT utterance",
                    )
                )
            seen_labels: set[str] = set()
            for opt in state.options:
                key = text_key(opt.label)
                if key in seen_labels:
                    errors.append(
                        ParseError(
                            opt.line,
                            1,
                            ParseErrorKind.SYNTAX,
                            f"option label {opt.label!r} repeats within state {state_id!r}",
                        )
                    )
                seen_labels.add(key)
                if opt.target != END and opt.target not in block.states:
                    errors.append(
                        ParseError(
                            opt.line,
                            opt.column,
                            ParseErrorKind.DANGLING_TARGET,
                            f"option targets undeclared state {opt.target!r}",
                        )
                    )
        if len(errors) > entries_errors_before:
            continue

        entry_id = next(s.state_id for s in block.states.values() if s.entry_flag)
        fsm = DialogueFsm(
            session_id=block.session_id,
            states={
                state_id: DialogueState(
                    state_id=state_id,
                    agent_utterance=block.states[state_id].utterance or "",
                    is_entry=block.states[state_id].entry_flag,
                    options=tuple(
                        ResponseOption(option_id=f"o{i}", label=o.label, target=o.target)
                        for i, o in enumerate(block.states[state_id].options, start=1)
                    ),
                    tags=tuple(block.states[state_id].tags),
                )
                for state_id in block.order
            },
            entry=entry_id,
        )

        reached = reachable_states(fsm)
        unreachable = [s for s in block.order if s not in reached]
        for state_id in unreachable:
            errors.append(
                ParseError(
                    block.states[state_id].line,
                    1,
                    ParseErrorKind.SYNTAX,
                    f"state {state_id!r} is unreachable from the entry state",
                )
            )
        if unreachable:
            continue

        # Belt and braces: the checks above mirror validate_fsm; any residual
        # defect is converted rather than silently accepted.
        report = validate_fsm(fsm)
        if not report.ok:
            for defect in report.defects:
                errors.append(
                    ParseError(block.line, 1, ParseErrorKind.SYNTAX, defect.message)
                )
            continue
        entries.append(DialogueEntry(title=block.title, fsm=fsm))

    if errors:
        raise ParseFailure(sorted(errors, key=lambda e: (e.line, e.column)))
    assert header is not None
    return MarkupDocument(header=header, dialogues=tuple(entries))


# --- serialization -----------------------------------------------------------


def _encode_string(value: str) -> str:
    return '"' + "".join(_UNESCAPES.get(ch, ch) for ch in value) + '"'


def serialize(doc: MarkupDocument) -> str:
    """Canonical text for a document. Deterministic: equal documents yield
    byte-identical output. Refuses documents whose dialogues would not
    re-parse cleanly."""
    if doc.header.version not in SUPPORTED_VERSIONS:
        raise SerializeError(f"unsupported version {doc.header.version!r}")
    seen_ids: set[str] = set()
    for entry in doc.dialogues:
        fsm = entry.fsm
        if not is_valid_id(fsm.session_id):
            raise SerializeError(f"invalid session id {fsm.session_id!r}")
        if fsm.session_id in seen_ids:
            raise SerializeError(f"duplicate session id {fsm.session_id!r}")
        seen_ids.add(fsm.session_id)
        report = validate_fsm(fsm)
        if not report.ok:
            raise SerializeError(
                f"dialogue {fsm.session_id!r} has validation defects; refusing to serialize",
                report.defects,
            )
        for state in fsm.sorted_states():
            if not is_valid_id(state.state_id):
                raise SerializeError(f"invalid state id {state.state_id!r}")
            for raw in state.tags:
                if "=" not in raw or "\t" in raw or "\n" in raw:
                    raise SerializeError(f"malformed TAG {raw!r} in state {state.state_id!r}")

    lines: list[str] = [f"{doc.header.format_name} {doc.header.version}"]
    for index, entry in enumerate(doc.dialogues):
        if index > 0:
            lines.append("")
        lines.append(f"DIALOGUE {entry.fsm.session_id} {_encode_string(entry.title)}")
        for state in entry.fsm.sorted_states():
            suffix = " ENTRY" if state.is_entry else ""
            lines.append(f"  STATE {state.state_id}{suffix}")
            lines.append(f"    AGENT {_encode_string(state.agent_utterance)}")
            for opt in state.options:
                lines.append(f"    OPTION {_encode_string(opt.label)} -> {opt.target}")
            for raw in state.tags:
                lines.append(f"    TAG {raw}")
    return "\n".join(lines) + "\n"


# --- session plan JSON -------------------------------------------------------


def parse_session_plan_json(text: str) -> SessionPlan:
    """Parse the planner's JSON contract into a SessionPlan.

    Required shape: ``{"sessions": [{"id", "topic", "key_points"}, ...]}``.
    Unknown extra fields are ignored; every rule violation is reported with
    the violated rule named in the message. Raises :class:`ParseFailure`.
    """
    last_line = max(1, text.count("\n") + 1)

    def err(message: str, line: int = 1, column: int = 1) -> ParseError:
        return ParseError(min(line, last_line), max(1, column), ParseErrorKind.SYNTAX, message)

    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseFailure([err(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno)]) from exc

    errors: list[ParseError] = []
    if not isinstance(data, dict):
        raise ParseFailure([err("top-level JSON value must be an object")])
    sessions_raw = data.get("sessions")
    if sessions_raw is None:
        raise ParseFailure([err("missing required field 'sessions'")])
    if not isinstance(sessions_raw, list):
        raise ParseFailure([err("'sessions' must be an array")])
    if not sessions_raw:
        raise ParseFailure([err("'sessions' must not be empty")])

    topics: list[SessionTopic] = []
    for index, item in enumerate(sessions_raw, start=1):
        where = f"sessions[{index - 1}]"
        if not isinstance(item, dict):
            errors.append(err(f"{where} must be an object"))
            continue
        missing = [name for name in ("id", "topic", "key_points") if name not in item]
        if missing:
            errors.append(err(f"{where} is missing required field(s): {', '.join(missing)}"))
            continue
        session_id = item["id"]
        title = item["topic"]
        key_points = item["key_points"]
        if not isinstance(session_id, str) or not is_valid_id(session_id):
            errors.append(err(f"{where}.id must be a lowercase alphanumeric-or-hyphen id"))
            continue
        if not isinstance(title, str) or not title.strip():
            errors.append(err(f"{where}.topic must be a non-empty string"))
            continue
        if (
            not isinstance(key_points, list)
            or not key_points
            or any(not isinstance(p, str) or not p.strip() for p in key_points)
        ):
            errors.append(err(f"{where}.key_points must be a non-empty array of non-empty strings"))
            continue
        topics.append(
            SessionTopic(session_id=session_id, ordinal=index, title=title, key_points=tuple(key_points))
        )

    if not errors:
        for problem in plan_problems(topics):
            errors.append(err(problem))
    if errors:
        raise ParseFailure(errors)
    return SessionPlan(sessions=tuple(topics))
