"""Shared generators and fixtures.

The random generators here produce structurally valid dialogues (entry,
reachability, unique labels) with deliberately awkward text: quotes,
backslashes, newlines, tabs, hashes, and non-ASCII, to stress the markup
round trip. Defect injectors break exactly one rule at a time for the
validation-completeness tests.
"""

from __future__ import annotations

import random
import string
from dataclasses import replace
from pathlib import Path

import pytest

from healthdial.editing import EditHistory, project_hash
from healthdial.markup import Header, MarkupDocument, DialogueEntry, FORMAT_NAME, FORMAT_VERSION
from healthdial.model import (
    END,
    DialogueFsm,
    DialogueState,
    Material,
    MaterialSource,
    Project,
    ResponseOption,
    SessionPlan,
    SessionTopic,
)

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

_TEXT_ALPHABET = (
    string.ascii_letters + string.digits + "     .,!?'\"\\#->:;()" + "\n\t" + "éñü你好"
)


def rand_text(rng: random.Random, lo: int = 1, hi: int = 40) -> str:
    length = rng.randint(lo, hi)
    text = "".join(rng.choice(_TEXT_ALPHABET) for _ in range(length))
    if not text.strip():
        text += rng.choice(string.ascii_lowercase)
    return text


def rand_label(rng: random.Random, index: int) -> str:
    # The numeric suffix keeps labels unique within a state even after
    # case-insensitive whitespace normalization.
    return f"{rand_text(rng, 1, 18)} {index}"


def rand_valid_fsm(
    rng: random.Random,
    session_id: str = "s1",
    n_states: int | None = None,
    extra_option_rate: float = 0.8,
) -> DialogueFsm:
    n = n_states if n_states is not None else rng.randint(1, 12)
    ids = [f"n{i}" for i in range(n)]
    options: dict[str, list[ResponseOption]] = {sid: [] for sid in ids}

    # A spanning arborescence from the entry keeps every state reachable.
    for i in range(1, n):
        parent = ids[rng.randrange(i)]
        options[parent].append(
            ResponseOption(
                option_id=f"o{parent}-{len(options[parent]) + 1}",
                label=rand_label(rng, len(options[parent]) + 1),
                target=ids[i],
            )
        )
    for sid in ids:
        while rng.random() < extra_option_rate and len(options[sid]) < 5:
            target = rng.choice(ids + [END])
            options[sid].append(
                ResponseOption(
                    option_id=f"o{sid}-{len(options[sid]) + 1}",
                    label=rand_label(rng, len(options[sid]) + 1),
                    target=target,
                )
            )
        rng.shuffle(options[sid])

    def tag_value() -> str:
        # TAG values are unquoted: no tabs, newlines, hashes, or quotes.
        cleaned = "".join(
            ch if ch not in '\t\n#"' else " " for ch in rand_text(rng, 1, 10)
        ).strip()
        return cleaned or "v"

    states = {}
    for sid in ids:
        tags = tuple(f"k{j}={tag_value()}" for j in range(rng.randint(0, 2)))
        states[sid] = DialogueState(
            state_id=sid,
            agent_utterance=rand_text(rng, 1, 60),
            options=tuple(options[sid]),
            is_entry=(sid == ids[0]),
            tags=tags,
        )
    return DialogueFsm(session_id=session_id, states=states, entry=ids[0])


def rand_document(rng: random.Random, max_dialogues: int = 3) -> MarkupDocument:
    count = rng.randint(1, max_dialogues)
    entries = tuple(
        DialogueEntry(
            title=rand_text(rng, 1, 30),
            fsm=rand_valid_fsm(rng, session_id=f"d{i}", n_states=rng.randint(1, 10)),
        )
        for i in range(count)
    )
    return MarkupDocument(header=Header(FORMAT_NAME, FORMAT_VERSION), dialogues=entries)


# -- defect injection -----------------------------------------------------------


def inject_no_entry(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    entry = fsm.states[fsm.entry]
    return fsm.with_state(replace(entry, is_entry=False))


def inject_multiple_entry(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    others = [s for s in fsm.states if s != fsm.entry]
    if not others:
        extra = DialogueState(state_id="zz-extra", agent_utterance="x", is_entry=True)
        fsm = fsm.with_state(extra)
        entry_opts = fsm.states[fsm.entry].options + (
            ResponseOption(option_id="o-extra", label="reach the extra state 99", target="zz-extra"),
        )
        return fsm.with_state(replace(fsm.states[fsm.entry], options=entry_opts))
    victim = fsm.states[rng.choice(others)]
    return fsm.with_state(replace(victim, is_entry=True))


def inject_dangling_target(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    victim = fsm.states[rng.choice(list(fsm.states))]
    ghost = ResponseOption(
        option_id="o-ghost", label="go somewhere missing 99", target="zz-ghost"
    )
    return fsm.with_state(replace(victim, options=victim.options + (ghost,)))


def inject_unreachable(fsm: DialogueFsm, rng: random.Random, count: int = 1) -> DialogueFsm:
    for i in range(count):
        orphan = DialogueState(
            state_id=f"zz-orphan{i}", agent_utterance=rand_text(rng, 1, 20)
        )
        fsm = fsm.with_state(orphan)
    return fsm


def inject_duplicate_label(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    candidates = [s for s in fsm.states.values() if s.options]
    if not candidates:
        fsm = inject_dangling_option_free_target(fsm, rng)
        candidates = [s for s in fsm.states.values() if s.options]
    victim = rng.choice(candidates)
    original = rng.choice(victim.options)
    clone_label = "  " + original.label.upper() + " "
    clone = ResponseOption(option_id="o-dup", label=clone_label, target=fsm.entry)
    return fsm.with_state(replace(victim, options=victim.options + (clone,)))


def inject_dangling_option_free_target(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    victim = fsm.states[fsm.entry]
    opt = ResponseOption(option_id="o-self", label="stay right here 42", target=fsm.entry)
    return fsm.with_state(replace(victim, options=victim.options + (opt,)))


def inject_empty_utterance(fsm: DialogueFsm, rng: random.Random) -> DialogueFsm:
    victim = fsm.states[rng.choice(list(fsm.states))]
    return fsm.with_state(replace(victim, agent_utterance=rng.choice(["", "   ", "\t \t"])))


# -- oracle: independent validation ------------------------------------------------


def oracle_defects(fsm: DialogueFsm) -> set[tuple[str, str]]:
    """Brute-force re-derivation of the full defect report as (kind, location)
    pairs, using Warshall transitive closure for reachability."""
    found: set[tuple[str, str]] = set()
    ids = sorted(fsm.states)
    flagged = [s for s in ids if fsm.states[s].is_entry]
    if fsm.entry not in fsm.states:
        found.add(("no-entry", "fsm"))
    if len(flagged) == 0:
        found.add(("no-entry", "fsm"))
    elif len(flagged) > 1:
        found.add(("multiple-entry", "fsm"))
    elif fsm.entry in fsm.states and flagged[0] != fsm.entry:
        found.add(("no-entry", "fsm"))

    for sid in ids:
        state = fsm.states[sid]
        if state.agent_utterance.strip() == "":
            found.add(("empty-utterance", sid))
        seen: list[str] = []
        for opt in state.options:
            normalized = " ".join(opt.label.split()).casefold()
            if normalized in seen:
                found.add(("duplicate-option-label", f"{sid}/{opt.option_id}"))
            seen.append(normalized)
            if opt.target != END and opt.target not in fsm.states:
                found.add(("dangling-target", f"{sid}/{opt.option_id}"))

    if fsm.entry in fsm.states:
        index = {sid: k for k, sid in enumerate(ids)}
        n = len(ids)
        closure = [[False] * n for _ in range(n)]
        for sid in ids:
            closure[index[sid]][index[sid]] = True
            for opt in fsm.states[sid].options:
                if opt.target in index:
                    closure[index[sid]][index[opt.target]] = True
        for k in range(n):
            for i in range(n):
                if closure[i][k]:
                    row_k = closure[k]
                    row_i = closure[i]
                    for j in range(n):
                        if row_k[j]:
                            row_i[j] = True
        start = index[fsm.entry]
        for sid in ids:
            if not closure[start][index[sid]]:
                found.add(("unreachable-state", sid))
    return found


# -- project scaffolding ------------------------------------------------------------


def make_project(
    rng: random.Random | None = None,
    n_sessions: int = 2,
    states_per_session: int = 4,
) -> Project:
    rng = rng or random.Random(0)
    topics = []
    fsms = {}
    for i in range(1, n_sessions + 1):
        sid = f"sess-{i}"
        topics.append(
            SessionTopic(
                session_id=sid,
                ordinal=i,
                title=f"Topic number {i}",
                key_points=tuple(f"point {i}.{j}" for j in range(1, 3)),
            )
        )
        fsms[sid] = rand_valid_fsm(rng, session_id=sid, n_states=states_per_session)
    material = Material.create("Sample", "Body text about health topics.\nMore text.")
    project = Project(
        project_id="p-test",
        material=material,
        plan=SessionPlan(sessions=tuple(topics)),
        fsms=fsms,
        history=EditHistory(base_hash=""),
        created=0.0,
        modified=0.0,
        plan_approved=True,
    )
    return replace(project, history=EditHistory(base_hash=project_hash(project)))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20250810)


@pytest.fixture
def project() -> Project:
    return make_project()
