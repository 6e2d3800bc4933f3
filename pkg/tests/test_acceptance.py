"""Acceptance gate: one test per release criterion, at full stated size.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import random
import re
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import pytest

import healthdial.store as store_module
from conftest import (
    FIXTURES,
    GOLDEN,
    inject_dangling_target,
    inject_duplicate_label,
    inject_empty_utterance,
    inject_multiple_entry,
    inject_no_entry,
    inject_unreachable,
    make_project,
    oracle_defects,
    rand_document,
    rand_valid_fsm,
)
from healthdial.editing import (
    CONTENT_KINDS,
    CommandKind,
    EditCommand,
    EditHistory,
    apply,
    project_hash,
    redo,
    revision_count,
    undo,
)
from healthdial.exceptions import EditError, InvalidStructuredOutputError
from healthdial.markup import parse, serialize
from healthdial.model import (
    END,
    DialogueState,
    Material,
    SessionTopic,
    fsm_to_dict,
    plan_to_dict,
    validate_fsm,
)
from healthdial.orchestration import (
    ExchangeOutcome,
    ScriptedProvider,
    key_point_coverage,
    plan_sessions,
)
from healthdial.runtime import choose, enumerate_paths, start
from healthdial.store import ProjectStore
from test_editing import quadratic_oracle, random_command
from test_orchestration import VALID_PLAN_JSON, fenced, independent_overlap_checker
from test_runtime import oracle_paths, project_with


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def test_markup_round_trip_1000_documents():
    with criterion("markup round-trip (1,000 documents)"):
        started = time.monotonic()
        failures = 0
        for seed in range(1000):
            doc = rand_document(random.Random(seed))
            if parse(serialize(doc)) != doc:
                failures += 1
        elapsed = time.monotonic() - started
        assert failures == 0
        assert elapsed < 30.0, f"round-trip suite took {elapsed:.1f}s (budget 30s)"


def test_validation_completeness_injected_defects():
    with criterion("validation completeness (6 kinds x 20 injected cases)"):
        injectors = {
            "no-entry": inject_no_entry,
            "multiple-entry": inject_multiple_entry,
            "dangling-target": inject_dangling_target,
            "unreachable-state": inject_unreachable,
            "duplicate-option-label": inject_duplicate_label,
            "empty-utterance": inject_empty_utterance,
        }
        for kind, injector in injectors.items():
            for case in range(20):
                rng = random.Random(hash((kind, case)) & 0xFFFFFF)
                clean = rand_valid_fsm(rng, n_states=rng.randint(1, 12))
                assert validate_fsm(clean).ok
                broken = injector(clean, rng)
                report = validate_fsm(broken)
                reported = {(d.kind.value, d.location) for d in report.defects}
                expected = oracle_defects(broken)
                # zero false positives and zero false negatives vs the oracle
                assert reported == expected, (kind, case)
                # 100% recall of the injected kind
                assert kind in {d.kind.value for d in report.defects}, (kind, case)


def _service_pipeline_run(tmp_path: Path, tag: str) -> bytes:
    from fastapi.testclient import TestClient

    from healthdial.config import Settings
    from healthdial.service import create_app

    material = (FIXTURES / "pipeline" / "material.txt").read_text(encoding="utf-8")
    responses = [(FIXTURES / "pipeline" / "plan" / "01.txt").read_text(encoding="utf-8")] + [
        (FIXTURES / "pipeline" / "design" / name).read_text(encoding="utf-8")
        for name in ("01.txt", "02.txt", "03.txt")
    ]
    store_root = tmp_path / f"svc-{tag}"
    app = create_app(
        store=ProjectStore(store_root),
        settings=Settings(store_root=store_root),
        provider=ScriptedProvider(responses),
    )
    client = TestClient(app)
    project_id = client.post(
        "/projects", json={"title": "Cancer screening", "material_text": material}
    ).json()["project_id"]
    plan = client.post(f"/projects/{project_id}/plan", json={}).json()
    client.put(f"/projects/{project_id}/plan/approve")
    for session in plan["sessions"]:
        response = client.post(f"/projects/{project_id}/sessions/{session['id']}/generate")
        assert response.status_code == 200, response.text
    return client.get(f"/projects/{project_id}/export").content


def _cli_pipeline_run(tmp_path: Path, tag: str, capsys) -> bytes:
    from healthdial.cli import main

    store = str(tmp_path / f"cli-{tag}")
    code = main(["ingest", str(FIXTURES / "pipeline" / "material.txt"), "--title", "Cancer screening", "--store", store])
    assert code == 0
    project_id = capsys.readouterr().out.strip()
    assert main(["plan", project_id, "--fixtures", str(FIXTURES / "pipeline" / "plan"), "--store", store]) == 0
    assert main(["generate", project_id, "--all", "--fixtures", str(FIXTURES / "pipeline" / "design"), "--store", store]) == 0
    out_file = Path(store) / "export.hdfsm"
    assert main(["export", project_id, "-o", str(out_file), "--store", store]) == 0
    capsys.readouterr()
    return out_file.read_bytes()


def test_deterministic_pipeline_10_runs_cli_and_service(tmp_path, capsys):
    with criterion("deterministic pipeline (10 runs, CLI vs service, golden)"):
        golden = (GOLDEN / "pipeline.hdfsm").read_bytes()
        digests = set()
        for run_index in range(10):
            exported = _service_pipeline_run(tmp_path, f"run{run_index}")
            digests.add(hashlib.sha256(exported).hexdigest())
            assert exported == golden
        for run_index in range(3):
            exported = _cli_pipeline_run(tmp_path, f"run{run_index}", capsys)
            digests.add(hashlib.sha256(exported).hexdigest())
            assert exported == golden
        assert len(digests) == 1


def test_repair_contract_all_attempt_patterns():
    with criterion("repair contract (2^3 patterns, <=3 calls, outcomes)"):
        material = Material.create("T", "Body text.")
        good = fenced(VALID_PLAN_JSON, "json")
        for pattern in itertools.product([True, False], repeat=3):
            responses = [good if ok else "garbage" for ok in pattern]
            provider = ScriptedProvider(responses)
            if True in pattern:
                first_success = pattern.index(True)
                plan, exchanges = plan_sessions(material, provider)
                assert provider.calls == first_success + 1
                expected = [ExchangeOutcome.FAILED] * first_success + [
                    ExchangeOutcome.PARSED if first_success == 0 else ExchangeOutcome.REPAIRED
                ]
                assert [e.outcome for e in exchanges] == expected
                assert plan.sessions
            else:
                with pytest.raises(InvalidStructuredOutputError) as info:
                    plan_sessions(material, provider)
                assert provider.calls == 3
                assert [e.outcome for e in info.value.exchanges] == [ExchangeOutcome.FAILED] * 3
            assert provider.calls <= 3


def test_revision_counting_200_command_corpus():
    with criterion("revision counting (200-command randomized corpus)"):
        for seed in range(10):
            rng = random.Random(1_000 + seed)
            project = make_project(rng, n_sessions=2, states_per_session=3)
            applied = 0
            while applied < 200:
                command = random_command(rng, project)
                if command is None:
                    continue
                try:
                    project = apply(project, command)
                except EditError:
                    continue
                applied += 1
            history = project.history
            assert len(history.applied) == 200
            assert revision_count(history) == quadratic_oracle(history)
            # the two anchored exclusions hold on the same corpus
            trail = [history.base_hash] + [a.hash_after for a in history.applied]
            discounted = set()
            for i in range(len(trail)):
                for j in range(i + 1, len(trail)):
                    if trail[i] == trail[j]:
                        discounted.update(range(i + 1, j + 1))
            for position, entry in enumerate(history.applied, start=1):
                if entry.command.kind not in CONTENT_KINDS:
                    assert entry.command.kind in (CommandKind.CONNECT_OPTION, CommandKind.REORDER_TOPICS)


def _canonical_digest(project) -> str:
    def strip_ids(fsm_dict):
        for state in fsm_dict["states"]:
            state["options"] = [{"label": o["label"], "target": o["target"]} for o in state["options"]]
        return fsm_dict

    blob = json.dumps(
        {
            "material": project.material.body,
            "plan": plan_to_dict(project.plan) if project.plan else None,
            "fsms": {sid: strip_ids(fsm_to_dict(f)) for sid, f in sorted(project.fsms.items())},
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def test_undo_redo_soundness_10000_steps():
    with criterion("undo/redo soundness (10,000-step walk vs stack model)"):
        rng = random.Random(77)
        project = make_project(rng, n_sessions=2, states_per_session=3)
        snapshots = [_canonical_digest(project)]
        pointer = 0
        steps = 0
        while steps < 10_000:
            roll = rng.random()
            if roll < 0.5:
                total_states = sum(len(f.states) for f in project.fsms.values())
                command = random_command(rng, project)
                if command is None:
                    continue
                if total_states > 60 and command.kind in (
                    CommandKind.ADD_STATE,
                    CommandKind.ADD_TOPIC,
                    CommandKind.ACCEPT_SUGGESTION,
                ):
                    continue
                try:
                    project = apply(project, command)
                except EditError:
                    continue
                snapshots[pointer + 1 :] = [_canonical_digest(project)]
                pointer = len(snapshots) - 1
            elif roll < 0.75:
                try:
                    project = undo(project)
                    pointer -= 1
                except EditError:
                    assert pointer == 0
            else:
                try:
                    project = redo(project)
                    pointer += 1
                except EditError:
                    assert pointer == len(snapshots) - 1
            steps += 1
            assert _canonical_digest(project) == snapshots[pointer]
            assert project.history.hash_at_cursor() == project_hash(project)


def test_runtime_equivalence_100_fsms():
    with criterion("runtime equivalence (100 FSMs, enumerate vs brute force, replay)"):
        for seed in range(100):
            rng = random.Random(10_000 + seed)
            fsm = rand_valid_fsm(rng, session_id="play-1", n_states=rng.randint(1, 8), extra_option_rate=0.4)
            paths = enumerate_paths(fsm, max_steps=8)
            assert [(p.choices, p.truncated) for p in paths] == oracle_paths(fsm, 8)
            project = project_with(fsm)
            for path in paths:
                play = start(project, "play-1")
                for index in path.choices:
                    play = choose(play, index)
                assert play.transcript == path.transcript
                if not path.truncated:
                    assert play.finished


class _KillInjected(RuntimeError):
    pass


def test_store_crash_safety_100_trials(tmp_path, monkeypatch):
    with criterion("store crash safety (100 kill-injected trials)"):
        rng = random.Random(5)
        store = ProjectStore(tmp_path / "crash-store")
        material = Material.create("T", "Body for crash trials.")
        project = store.create("T", material)
        from healthdial.model import SessionPlan

        plan = SessionPlan(sessions=(SessionTopic("sess-1", 1, "Topic", ("point",)),))
        project = replace(
            project, plan=plan, fsms={"sess-1": rand_valid_fsm(rng, "sess-1", 4)}, plan_approved=True
        )
        project = store.reset_history(project)
        store.save_content(project)
        directory = store.project_dir(project.project_id)

        real_replace = os.replace
        for trial in range(100):
            command = random_command(rng, project)
            if command is None:
                continue
            try:
                mutated = apply(project, command)
            except EditError:
                continue

            inject = rng.random() < 0.7
            if inject:
                arm = {"count": rng.randint(0, 2)}

                def killing_replace(src, dst):
                    if str(dst).endswith(".hdfsm"):
                        if arm["count"] == 0:
                            raise _KillInjected(str(dst))
                        arm["count"] -= 1
                    return real_replace(src, dst)

                monkeypatch.setattr(store_module.os, "replace", killing_replace)
                try:
                    store.save_content(mutated)
                    project = mutated  # no .hdfsm write happened to be killed
                except _KillInjected:
                    pass
                finally:
                    monkeypatch.setattr(store_module.os, "replace", real_replace)
                # recover: rewrite coherently before the next trial
                store.save_content(mutated)
                project = mutated
            else:
                store.save_content(mutated)
                project = mutated

            for hdfsm in directory.glob("*.hdfsm"):
                document = parse(hdfsm.read_text(encoding="utf-8"))
                for entry in document.dialogues:
                    assert validate_fsm(entry.fsm).ok


def test_coverage_metric_50_case_corpus():
    with criterion("coverage metric (50-case synthetic corpus vs checker)"):
        from healthdial.model import DialogueFsm

        rng = random.Random(404)
        vocabulary = [
            "screening", "cancer", "early", "family", "history", "test", "gene",
            "doctor", "plan", "risk", "results", "helps", "finding", "choices",
            "support", "questions", "appointment", "records", "relatives",
        ]
        for case in range(50):
            points = [
                " ".join(rng.sample(vocabulary, rng.randint(2, 6)))
                for _ in range(rng.randint(1, 5))
            ]
            states = {}
            for index in range(rng.randint(1, 6)):
                words = rng.sample(vocabulary, rng.randint(2, 9))
                if points and rng.random() < 0.6:
                    source = points[rng.randrange(len(points))].split()
                    words += source[: rng.randint(0, len(source))]
                rng.shuffle(words)
                sid = f"s{index}"
                states[sid] = DialogueState(sid, " ".join(words) + ".", is_entry=(index == 0))
            fsm = DialogueFsm("one", states, entry="s0")
            topic = SessionTopic("one", 1, "T", tuple(points))
            actual = key_point_coverage(fsm, topic)
            expected = independent_overlap_checker(fsm, points)
            for point in points:
                assert actual[point].covered == expected[point][0], (case, point)
                assert list(actual[point].witness_states) == expected[point][1], (case, point)
