"""File-per-artifact project store with atomic writes.

Each project lives in its own folder::

    <root>/<project-id>/
        material.txt     the source text, byte for byte
        meta.json        title, provenance, approval flag, progress, timestamps
        plan.json        the session plan (absent until planned)
        fsms.json        the working dialogues, including option ids
        <session>.hdfsm  the validated markup view of each clean dialogue
        edit-log.jsonl   append-only audit log (apply/undo/redo/reset records)
        llm-log.jsonl    append-only audit of provider exchanges

All writes go through write-temp-then-rename, so a crash mid-write leaves
the previous version intact and the store never holds an ``.hdfsm`` file
that fails parse or validation. ``fsms.json`` is the working truth (it may
legitimately contain mid-edit dialogues with defects, such as a freshly
added state that is not yet connected); the ``.hdfsm`` files track the last
clean version of each dialogue.
"""

from __future__ import annotations

import json
import logging
import os
import time
import uuid
from dataclasses import replace as dc_replace
from pathlib import Path
from typing import Optional

from .editing import (
    AppliedCommand,
    CommandKind,
    EditCommand,
    EditHistory,
    project_hash,
)
from .exceptions import StoreError
from .markup import FILE_EXTENSION, document_for, serialize
from .model import (
    DialogueFsm,
    Material,
    MaterialSource,
    Project,
    SessionPlan,
    fsm_from_dict,
    fsm_to_dict,
    new_id,
    plan_from_dict,
    plan_to_dict,
    validate_fsm,
)
from .runtime import ProgressLedger

log = logging.getLogger(__name__)


def atomic_write_text(path: Path, text: str) -> None:
    """Write UTF-8 text via a temp file in the same directory plus rename."""
    tmp = path.parent / f".{path.name}.{uuid.uuid4().hex[:8]}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


class ProjectStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- paths ---------------------------------------------------------------

    def project_dir(self, project_id: str) -> Path:
        return self.root / project_id

    def exists(self, project_id: str) -> bool:
        return (self.project_dir(project_id) / "meta.json").exists()

    def list_projects(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir() if (p / "meta.json").exists()
        ) if self.root.exists() else []

    # -- create / save ---------------------------------------------------------

    def create(self, title: str, material: Material, *, now: Optional[float] = None) -> Project:
        project_id = new_id("p-")
        directory = self.project_dir(project_id)
        directory.mkdir(parents=True, exist_ok=False)
        timestamp = now if now is not None else time.time()
        project = Project(
            project_id=project_id,
            material=material,
            plan=None,
            fsms={},
            history=EditHistory(base_hash=""),
            created=timestamp,
            modified=timestamp,
        )
        project = _with_fresh_history(project)
        atomic_write_text(directory / "material.txt", material.body)
        atomic_write_text(directory / "fsms.json", json.dumps({}, indent=2) + "\n")
        self._write_meta(project, ProgressLedger())
        self.append_edit_record(project_id, {"op": "reset", "base_hash": project.history.base_hash})
        return project

    def _write_meta(self, project: Project, progress: ProgressLedger) -> None:
        meta = {
            "project_id": project.project_id,
            "title": project.material.title,
            "material_id": project.material.id,
            "source": project.material.source.value,
            "imported_name": project.material.imported_name,
            "created": project.created,
            "modified": project.modified,
            "plan_approved": project.plan_approved,
            "progress": progress.to_dict(),
        }
        atomic_write_text(
            self.project_dir(project.project_id) / "meta.json",
            json.dumps(meta, indent=2, ensure_ascii=False) + "\n",
        )

    def save_content(self, project: Project, *, progress: Optional[ProgressLedger] = None) -> None:
        """Persist plan, working dialogues, and the markup view of every
        clean dialogue. Dialogues with validation defects keep their last
        clean ``.hdfsm`` file untouched."""
        directory = self.project_dir(project.project_id)
        if not directory.exists():
            raise StoreError(f"unknown project {project.project_id!r}")

        if project.plan is not None:
            atomic_write_text(
                directory / "plan.json",
                json.dumps(plan_to_dict(project.plan), indent=2, ensure_ascii=False) + "\n",
            )
        else:
            (directory / "plan.json").unlink(missing_ok=True)

        fsm_blob = {sid: fsm_to_dict(fsm) for sid, fsm in sorted(project.fsms.items())}
        atomic_write_text(
            directory / "fsms.json", json.dumps(fsm_blob, indent=2, ensure_ascii=False) + "\n"
        )

        titles = {t.session_id: t.title for t in project.plan.sessions} if project.plan else {}
        for session_id, fsm in project.fsms.items():
            if validate_fsm(fsm).ok:
                text = serialize(document_for([(titles.get(session_id, session_id), fsm)]))
                atomic_write_text(directory / f"{session_id}{FILE_EXTENSION}", text)
        for stale in directory.glob(f"*{FILE_EXTENSION}"):
            if stale.stem not in project.fsms:
                stale.unlink()

        self._write_meta(project, progress if progress is not None else self.load_progress(project.project_id))

    def append_edit_record(self, project_id: str, record: dict) -> None:
        path = self.project_dir(project_id) / "edit-log.jsonl"
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def append_llm_log(self, project_id: str, exchanges, context: str) -> None:
        path = self.project_dir(project_id) / "llm-log.jsonl"
        with open(path, "a", encoding="utf-8") as handle:
            for exchange in exchanges:
                record = {"context": context, **exchange.to_dict()}
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    # -- load ------------------------------------------------------------------

    def load(self, project_id: str) -> Project:
        directory = self.project_dir(project_id)
        meta_path = directory / "meta.json"
        if not meta_path.exists():
            raise StoreError(f"unknown project {project_id!r}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))

        body = (directory / "material.txt").read_text(encoding="utf-8")
        material = Material(
            id=meta.get("material_id", new_id("m-")),
            title=meta.get("title", "untitled"),
            body=body,
            source=MaterialSource(meta.get("source", "pasted")),
            imported_name=meta.get("imported_name"),
        )

        plan: Optional[SessionPlan] = None
        plan_path = directory / "plan.json"
        if plan_path.exists():
            plan = plan_from_dict(json.loads(plan_path.read_text(encoding="utf-8")))

        fsms: dict[str, DialogueFsm] = {}
        fsms_path = directory / "fsms.json"
        if fsms_path.exists():
            blob = json.loads(fsms_path.read_text(encoding="utf-8"))
            fsms = {sid: fsm_from_dict(data) for sid, data in blob.items()}

        project = Project(
            project_id=project_id,
            material=material,
            plan=plan,
            fsms=fsms,
            history=EditHistory(base_hash=""),
            created=meta.get("created", 0.0),
            modified=meta.get("modified", 0.0),
            plan_approved=bool(meta.get("plan_approved", False)),
        )
        history = self._load_history(directory / "edit-log.jsonl")
        project = dc_replace(project, history=history)
        current = project_hash(project)
        if project.history.hash_at_cursor() != current:
            # The log tail does not match the files (for example a crash
            # between a content write and the log append). Content wins.
            log.warning("project %s: edit history out of sync with content; resetting", project_id)
            project = _with_fresh_history(project)
        return project

    def _load_history(self, log_path: Path) -> EditHistory:
        if not log_path.exists():
            return EditHistory(base_hash="")
        base_hash = ""
        applied: list[AppliedCommand] = []
        cursor = 0
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            op = record.get("op")
            if op == "reset":
                base_hash = record.get("base_hash", "")
                applied = []
                cursor = 0
            elif op == "apply":
                applied = applied[:cursor]
                applied.append(
                    AppliedCommand(
                        command=EditCommand(CommandKind(record["kind"]), record["payload"]),
                        inverse=record.get("inverse", {}),
                        hash_after=record["hash_after"],
                    )
                )
                cursor = len(applied)
            elif op == "undo":
                cursor = max(0, cursor - 1)
            elif op == "redo":
                cursor = min(len(applied), cursor + 1)
        return EditHistory(base_hash=base_hash, applied=tuple(applied), cursor=cursor)

    def load_progress(self, project_id: str) -> ProgressLedger:
        meta_path = self.project_dir(project_id) / "meta.json"
        if not meta_path.exists():
            return ProgressLedger()
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return ProgressLedger.from_dict(meta.get("progress", {}))

    def save_progress(self, project: Project, progress: ProgressLedger) -> None:
        self._write_meta(project, progress)

    def reset_history(self, project: Project) -> Project:
        """Start a fresh edit history at the current content. Used after
        non-command content changes (planning, generation, import), which
        cannot be undone."""
        project = _with_fresh_history(project)
        self.append_edit_record(project.project_id, {"op": "reset", "base_hash": project.history.base_hash})
        return project


def _with_fresh_history(project: Project) -> Project:
    return dc_replace(project, history=EditHistory(base_hash=project_hash(project)))
