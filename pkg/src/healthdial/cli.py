"""Headless driver for scripting and CI.

Exit codes: 0 success, 1 validation defects found, 2 usage error,
3 provider failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import editing, orchestration, runtime
from .config import Settings, load_settings
from .exceptions import (
    EditError,
    HealthDialError,
    InvalidStructuredOutputError,
    NoNovelOptionsError,
    ParseFailure,
    PlayError,
    ProviderError,
    SerializeError,
    StoreError,
)
from .markup import FILE_EXTENSION, document_for, parse, serialize
from .model import Material, MaterialSource, Project, validate_fsm
from .orchestration import LlmProvider, RevisionCue, ScriptedProvider
from .reporting import format_table, write_report
from .store import ProjectStore

EXIT_OK = 0
EXIT_DEFECTS = 1
EXIT_USAGE = 2
EXIT_PROVIDER = 3


def _provider(settings: Settings, fixtures: Optional[str]) -> LlmProvider:
    if fixtures:
        return ScriptedProvider.from_dir(fixtures)
    if settings.fixtures_dir:
        return ScriptedProvider.from_dir(settings.fixtures_dir)
    return orchestration.HttpProvider(
        settings.provider_endpoint, settings.provider_api_key, settings.provider_model
    )


def _store(settings: Settings, override: Optional[str]) -> ProjectStore:
    return ProjectStore(override or settings.store_root)


def cmd_ingest(args, settings: Settings) -> int:
    if args.file == "-":
        text = sys.stdin.read()
        source = MaterialSource.PASTED
        imported_name = None
    else:
        path = Path(args.file)
        if not path.exists():
            print(f"error: no such file: {path}", file=sys.stderr)
            return EXIT_USAGE
        text = path.read_text(encoding="utf-8")
        source = MaterialSource.IMPORTED_FILE
        imported_name = path.name
    try:
        material = Material.create(
            title=args.title, body=text, source=source, imported_name=imported_name,
            cap=settings.material_cap,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    project = _store(settings, args.store).create(args.title, material)
    print(project.project_id)
    return EXIT_OK


def cmd_plan(args, settings: Settings) -> int:
    store = _store(settings, args.store)
    project = store.load(args.project_id)
    cue = RevisionCue(args.cue) if args.cue else None
    if cue is not None and project.plan is None:
        print("error: --cue needs an existing plan to revise", file=sys.stderr)
        return EXIT_USAGE
    plan, exchanges = orchestration.plan_sessions(
        project.material,
        _provider(settings, args.fixtures),
        cue=cue,
        prior=project.plan,
        max_attempts=settings.max_repair_attempts,
    )
    store.append_llm_log(project.project_id, exchanges, context="plan")
    project = replace(project, plan=plan, plan_approved=False, fsms={})
    project = store.reset_history(project)
    store.save_content(project)
    for topic in plan.sessions:
        print(f"{topic.ordinal}. [{topic.session_id}] {topic.title} ({len(topic.key_points)} key points)")
    return EXIT_OK


def cmd_generate(args, settings: Settings) -> int:
    store = _store(settings, args.store)
    project = store.load(args.project_id)
    if project.plan is None:
        print("error: plan the project first", file=sys.stderr)
        return EXIT_USAGE
    if args.session:
        sessions = [project.plan.get(args.session)]
        if sessions[0] is None:
            print(f"error: no session {args.session!r} in the plan", file=sys.stderr)
            return EXIT_USAGE
    else:
        sessions = list(project.plan.sessions)
    # Proceeding to generation is the headless form of plan approval.
    project = replace(project, plan_approved=True)
    provider = _provider(settings, args.fixtures)
    fsms = dict(project.fsms)
    for session in sessions:
        fsm, exchanges = orchestration.generate_fsm(
            project.material, project.plan, session, provider,
            max_attempts=settings.max_repair_attempts,
        )
        store.append_llm_log(project.project_id, exchanges, context=f"generate:{session.session_id}")
        fsms[session.session_id] = fsm
        print(f"generated {session.session_id}: {len(fsm.states)} states")
    project = replace(project, fsms=fsms)
    project = store.reset_history(project)
    store.save_content(project)
    return EXIT_OK


def _validate_file(path: Path) -> int:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        document = parse(text)
    except ParseFailure as failure:
        for error in failure.errors:
            print(f"{path}:{error.line}:{error.column}: [{error.kind.value}] {error.message}")
        return EXIT_DEFECTS
    print(f"{path}: ok ({len(document.dialogues)} dialogue(s))")
    return EXIT_OK


def cmd_validate(args, settings: Settings) -> int:
    target = args.target
    path = Path(target)
    if path.exists() and path.is_file():
        return _validate_file(path)
    store = _store(settings, args.store)
    if not store.exists(target):
        print(f"error: {target!r} is neither a file nor a known project id", file=sys.stderr)
        return EXIT_USAGE
    project = store.load(target)
    defects = 0
    for session_id in sorted(project.fsms):
        report = validate_fsm(project.fsms[session_id])
        for defect in report.defects:
            defects += 1
            print(f"{session_id}: [{defect.kind.value}] at {defect.location}: {defect.message}")
    if project.plan:
        for topic in project.plan.sessions:
            if topic.session_id not in project.fsms:
                print(f"{topic.session_id}: not generated yet (no defects to check)")
    if defects:
        print(f"{defects} defect(s) found")
        return EXIT_DEFECTS
    print("ok: no defects")
    return EXIT_OK


def cmd_play(args, settings: Settings) -> int:
    store = _store(settings, args.store)
    project = store.load(args.project_id)
    progress = store.load_progress(args.project_id)
    if project.plan is not None and not progress.can_start(
        project.plan, args.session, free_order=settings.free_play_order
    ):
        print("error: session is locked; finish the earlier sessions first", file=sys.stderr)
        return EXIT_USAGE
    play = runtime.start(project, args.session)
    progress.mark_started(args.session)
    scripted = [int(c) for c in args.choices.split(",")] if args.choices else None
    cursor = 0
    while True:
        print(f"agent: {play.transcript[-1].agent_utterance}")
        if play.finished:
            break
        options = play.current_options()
        for index, label in enumerate(options):
            print(f"  {index}. {label}")
        if scripted is not None:
            if cursor >= len(scripted):
                print("(choice script exhausted; stopping)", file=sys.stderr)
                break
            choice = scripted[cursor]
            cursor += 1
            print(f"patient: [{choice}] {options[choice] if 0 <= choice < len(options) else '?'}")
        else:
            try:
                choice = int(input("choice> "))
            except (ValueError, EOFError):
                print("(no choice; stopping)", file=sys.stderr)
                break
        play = runtime.choose(play, choice)
    if play.finished:
        progress.mark_completed(args.session)
        print("(conversation finished)")
    store.save_progress(project, progress)
    if args.transcript:
        Path(args.transcript).write_text(runtime.transcript_jsonl(play), encoding="utf-8")
        print(f"transcript written to {args.transcript}")
    return EXIT_OK


def _export_text(project: Project) -> str:
    pairs = []
    if project.plan is not None:
        for topic in project.plan.sessions:
            fsm = project.fsms.get(topic.session_id)
            if fsm is not None:
                pairs.append((topic.title, fsm))
    return serialize(document_for(pairs))


def cmd_export(args, settings: Settings) -> int:
    store = _store(settings, args.store)
    project = store.load(args.project_id)
    text = _export_text(project)
    if args.output and args.output != "-":
        Path(args.output).write_text(text, encoding="utf-8", newline="")
        print(f"exported to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args, settings: Settings) -> int:
    store = _store(settings, args.store)
    project = store.load(args.project_id)
    print(format_table(project))
    if args.report:
        written = write_report(project, Path(args.report))
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_serve(args, settings: Settings) -> int:  # pragma: no cover - network entry point
    import uvicorn

    from .service import create_app

    if args.store:
        settings.store_root = Path(args.store)
    host, _, port = settings.listen.partition(":")
    uvicorn.run(create_app(settings=settings), host=args.host or host or "127.0.0.1",
                port=args.port or int(port or 8077))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="healthdial",
        description="Turn patient-education text into finite-state-machine dialogues for virtual agents.",
    )
    parser.add_argument("--config", help="path to a JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_store(p):
        p.add_argument("--store", help="project store directory (default from config/env)")

    p = sub.add_parser("ingest", help="create a project from a text file or stdin")
    p.add_argument("file", help="path to a UTF-8 text file, or - for stdin")
    p.add_argument("--title", required=True)
    add_store(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("plan", help="derive (or revise) the session plan")
    p.add_argument("project_id")
    p.add_argument("--cue", help="free-text direction for revising the existing plan")
    p.add_argument("--fixtures", help="directory of scripted provider responses")
    add_store(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("generate", help="generate dialogue(s) from the plan")
    p.add_argument("project_id")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--session", help="generate one session")
    group.add_argument("--all", action="store_true", help="generate every session in plan order")
    p.add_argument("--fixtures", help="directory of scripted provider responses")
    add_store(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="validate a project or a .hdfsm file")
    p.add_argument("target", help="project id or path to a .hdfsm file")
    add_store(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("play", help="play a session as the patient")
    p.add_argument("project_id")
    p.add_argument("--session", required=True)
    p.add_argument("--choices", help="comma-separated option indices for non-interactive runs")
    p.add_argument("--transcript", help="write the transcript as JSON lines to this file")
    add_store(p)
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("export", help="export every dialogue as one .hdfsm document")
    p.add_argument("project_id")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    add_store(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="dialogue sizes, key-point coverage, revision count")
    p.add_argument("project_id")
    p.add_argument("--report", help="write stats.csv and figures into this directory")
    add_store(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="")
    p.add_argument("--port", type=int, default=0)
    add_store(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_settings(config_path=args.config)
    try:
        return args.func(args, settings)
    except (ProviderError, InvalidStructuredOutputError, NoNovelOptionsError) as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except SerializeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for defect in exc.defects:
            print(f"  [{defect.kind.value}] at {defect.location}: {defect.message}", file=sys.stderr)
        return EXIT_DEFECTS
    except ParseFailure as failure:
        for error in failure.errors:
            print(f"{error.line}:{error.column}: [{error.kind.value}] {error.message}", file=sys.stderr)
        return EXIT_DEFECTS
    except (StoreError, EditError, PlayError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HealthDialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
