"""Core model: validation, reachability, stats."""

from __future__ import annotations

import random
from dataclasses import replace

import pytest

from conftest import (
    inject_dangling_target,
    inject_unreachable,
    oracle_defects,
    rand_valid_fsm,
)
from healthdial.model import (
    END,
    DefectKind,
    DialogueFsm,
    DialogueState,
    FsmStats,
    Material,
    ResponseOption,
    fsm_stats,
    reachable_states,
    validate_fsm,
)


def fsm_of(*states: DialogueState, entry: str = None, session_id: str = "s1") -> DialogueFsm:
    entry = entry or states[0].state_id
    return DialogueFsm(session_id=session_id, states={s.state_id: s for s in states}, entry=entry)


def state(sid: str, utterance: str = "Hi", options=(), is_entry: bool = False) -> DialogueState:
    opts = tuple(
        ResponseOption(option_id=f"o{i}", label=label, target=target)
        for i, (label, target) in enumerate(options, start=1)
    )
    return DialogueState(state_id=sid, agent_utterance=utterance, options=opts, is_entry=is_entry)


def chain(n: int) -> DialogueFsm:
    states = []
    for i in range(1, n + 1):
        options = [(f"next {i}", f"s{i + 1}")] if i < n else []
        states.append(state(f"s{i}", f"utterance {i}", options, is_entry=(i == 1)))
    return fsm_of(*states)


class TestValidateFsm:
    def test_minimal_valid_fsm(self):
        report = validate_fsm(fsm_of(state("s1", "Hi", is_entry=True)))
        assert report.ok
        assert report.defects == ()

    def test_dangling_target_reported_at_option(self):
        fsm = fsm_of(state("s1", "Hi", [("go", "s2")], is_entry=True))
        report = validate_fsm(fsm)
        assert [d.kind for d in report.defects] == [DefectKind.DANGLING_TARGET]
        assert report.defects[0].location == "s1/o1"

    def test_no_entry(self):
        fsm = fsm_of(state("s1", "Hi"))
        assert validate_fsm(fsm).kinds() == {DefectKind.NO_ENTRY}

    def test_multiple_entry(self):
        fsm = fsm_of(
            state("s1", "Hi", [("go", "s2")], is_entry=True),
            state("s2", "Yo", is_entry=True),
        )
        assert validate_fsm(fsm).kinds() == {DefectKind.MULTIPLE_ENTRY}

    def test_entry_field_mismatch(self):
        fsm = DialogueFsm(
            session_id="s1",
            states={
                "a": state("a", "Hi", [("go", "b")], is_entry=False),
                "b": state("b", "Yo", is_entry=True),
            },
            entry="a",
        )
        assert DefectKind.NO_ENTRY in validate_fsm(fsm).kinds()

    def test_duplicate_option_label_case_insensitive(self):
        fsm = fsm_of(state("s1", "Hi", [("Yes", END), ("  yes ", END)], is_entry=True))
        report = validate_fsm(fsm)
        assert report.kinds() == {DefectKind.DUPLICATE_OPTION_LABEL}
        assert report.defects[0].location == "s1/o2"

    def test_empty_utterance(self):
        fsm = fsm_of(state("s1", "   ", is_entry=True))
        assert validate_fsm(fsm).kinds() == {DefectKind.EMPTY_UTTERANCE}

    def test_unreachable_states_match_bfs_oracle(self):
        rng = random.Random(42)
        fsm = rand_valid_fsm(rng, n_states=12)
        fsm = inject_unreachable(fsm, rng, count=3)
        report = validate_fsm(fsm)
        unreachable = {d.location for d in report.defects if d.kind is DefectKind.UNREACHABLE_STATE}
        assert unreachable == {"zz-orphan0", "zz-orphan1", "zz-orphan2"}
        assert {(d.kind.value, d.location) for d in report.defects} == oracle_defects(fsm)

    def test_validate_is_pure(self, rng):
        fsm = rand_valid_fsm(rng, n_states=8)
        fsm = inject_dangling_target(fsm, rng)
        assert validate_fsm(fsm) == validate_fsm(fsm)

    def test_adding_unconnected_state_adds_exactly_one_defect(self, rng):
        for seed in range(25):
            fsm = rand_valid_fsm(random.Random(seed), n_states=random.Random(seed).randint(1, 9))
            before = validate_fsm(fsm)
            assert before.ok
            grown = fsm.with_state(DialogueState(state_id="zz-new", agent_utterance="fresh"))
            after = validate_fsm(grown)
            assert [d.kind for d in after.defects] == [DefectKind.UNREACHABLE_STATE]
            assert after.defects[0].location == "zz-new"


class TestReachableStates:
    def test_linear_chain(self):
        assert reachable_states(chain(3)) == {"s1", "s2", "s3"}

    def test_entry_without_options_is_identity(self):
        fsm = fsm_of(state("s1", "Hi", is_entry=True))
        assert reachable_states(fsm) == {"s1"}

    def test_always_contains_entry(self, rng):
        for _ in range(50):
            fsm = rand_valid_fsm(rng)
            assert fsm.entry in reachable_states(fsm)

    def test_missing_entry_raises(self):
        fsm = DialogueFsm(session_id="s1", states={}, entry="ghost")
        with pytest.raises(ValueError):
            reachable_states(fsm)

    def test_matches_matrix_power_closure_oracle(self):
        for seed in range(30):
            rng = random.Random(seed)
            fsm = rand_valid_fsm(rng, n_states=20)
            # Random digraph: rewire some options to arbitrary targets so the
            # graph is no longer guaranteed connected.
            states = dict(fsm.states)
            for sid, st in states.items():
                new_opts = tuple(
                    replace(o, target=rng.choice(list(states) + [END])) if rng.random() < 0.5 else o
                    for o in st.options
                )
                states[sid] = replace(st, options=new_opts)
            fsm = DialogueFsm(session_id=fsm.session_id, states=states, entry=fsm.entry)

            ids = sorted(states)
            index = {s: i for i, s in enumerate(ids)}
            n = len(ids)
            adjacency = [[False] * n for _ in range(n)]
            for sid, st in states.items():
                for opt in st.options:
                    if opt.target != END:
                        adjacency[index[sid]][index[opt.target]] = True
            # Transitive closure by repeated boolean matrix multiplication.
            closure = [row[:] for row in adjacency]
            for _ in range(n):
                product = [[False] * n for _ in range(n)]
                for i in range(n):
                    for k in range(n):
                        if closure[i][k]:
                            for j in range(n):
                                if adjacency[k][j]:
                                    product[i][j] = True
                changed = False
                for i in range(n):
                    for j in range(n):
                        if product[i][j] and not closure[i][j]:
                            closure[i][j] = True
                            changed = True
                if not changed:
                    break
            start = index[fsm.entry]
            expected = {fsm.entry} | {sid for sid in ids if closure[start][index[sid]]}
            assert reachable_states(fsm) == expected


class TestFsmStats:
    def test_single_terminal_state(self):
        assert fsm_stats(fsm_of(state("s1", "Hi", is_entry=True))) == FsmStats(1, 0, 1, 0)

    def test_chain_of_four(self):
        assert fsm_stats(chain(4)) == FsmStats(4, 3, 1, 3)

    def test_matches_exhaustive_dfs_oracle(self):
        for seed in range(40):
            rng = random.Random(1000 + seed)
            fsm = rand_valid_fsm(rng, n_states=rng.randint(1, 10))
            reached = reachable_states(fsm)

            def oracle_depth(sid, on_path):
                best = 0
                for opt in fsm.states[sid].options:
                    if opt.target == END or opt.target in on_path:
                        step = 1
                    else:
                        step = 1 + oracle_depth(opt.target, on_path | {opt.target})
                    best = max(best, step)
                return best

            expected = FsmStats(
                state_count=len(reached),
                option_count=sum(len(fsm.states[s].options) for s in reached),
                terminal_count=sum(1 for s in reached if not fsm.states[s].options),
                max_depth=oracle_depth(fsm.entry, {fsm.entry}),
            )
            assert fsm_stats(fsm) == expected


class TestMaterial:
    def test_empty_body_rejected(self):
        with pytest.raises(ValueError):
            Material.create("t", "   \n ")

    def test_oversize_rejected(self):
        with pytest.raises(ValueError):
            Material.create("t", "x" * 101, cap=100)

    def test_cap_boundary_allowed(self):
        material = Material.create("t", "x" * 100, cap=100)
        assert len(material.body) == 100
