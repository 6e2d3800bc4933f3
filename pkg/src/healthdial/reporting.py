"""Project statistics: per-session dialogue size, key-point coverage, and
the revision counter, as a table, a CSV, and rendered figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .editing import revision_count
from .model import Project, fsm_stats, validate_fsm
from .orchestration import key_point_coverage

CSV_COLUMNS = [
    "session_id",
    "topic",
    "states",
    "options",
    "terminals",
    "max_depth",
    "key_points",
    "key_points_covered",
    "valid",
]


@dataclass(frozen=True)
class SessionRow:
    session_id: str
    topic: str
    states: int
    options: int
    terminals: int
    max_depth: int
    key_points: int
    key_points_covered: int
    valid: bool


def project_rows(project: Project) -> list[SessionRow]:
    rows: list[SessionRow] = []
    if project.plan is None:
        return rows
    for topic in project.plan.sessions:
        fsm = project.fsms.get(topic.session_id)
        if fsm is None:
            rows.append(SessionRow(topic.session_id, topic.title, 0, 0, 0, 0, len(topic.key_points), 0, False))
            continue
        ok = validate_fsm(fsm).ok
        if ok:
            stats = fsm_stats(fsm)
            states, options = stats.state_count, stats.option_count
            terminals, depth = stats.terminal_count, stats.max_depth
        else:
            states = len(fsm.states)
            options = sum(len(s.options) for s in fsm.states.values())
            terminals = sum(1 for s in fsm.states.values() if not s.options)
            depth = 0
        coverage = key_point_coverage(fsm, topic)
        covered = sum(1 for result in coverage.values() if result.covered)
        rows.append(
            SessionRow(
                topic.session_id,
                topic.title,
                states,
                options,
                terminals,
                depth,
                len(topic.key_points),
                covered,
                ok,
            )
        )
    return rows


def format_table(project: Project) -> str:
    rows = project_rows(project)
    lines = [f"project: {project.project_id}  ({project.material.title})"]
    if not rows:
        lines.append("no session plan yet")
    for row in rows:
        status = "ok" if row.valid else "INVALID" if row.states else "not generated"
        lines.append(
            f"  {row.session_id}: \"{row.topic}\"  states={row.states} options={row.options} "
            f"terminals={row.terminals} depth={row.max_depth} "
            f"coverage={row.key_points_covered}/{row.key_points}  [{status}]"
        )
    lines.append(f"revision count: {revision_count(project.history)}")
    return "\n".join(lines)


def write_csv(project: Project, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in project_rows(project):
            writer.writerow(
                [
                    row.session_id,
                    row.topic,
                    row.states,
                    row.options,
                    row.terminals,
                    row.max_depth,
                    row.key_points,
                    row.key_points_covered,
                    int(row.valid),
                ]
            )


def render_figures(project: Project, outdir: Path) -> list[Path]:
    """Render dialogue-size and coverage bar charts as PNGs next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = project_rows(project)
    written: list[Path] = []
    if not rows:
        return written
    labels = [row.session_id for row in rows]
    positions = range(len(rows))

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows) + 2), 3.2))
    width = 0.38
    ax.bar([p - width / 2 for p in positions], [r.states for r in rows], width, label="states")
    ax.bar([p + width / 2 for p in positions], [r.options for r in rows], width, label="options")
    ax.set_xticks(list(positions), labels, rotation=20, ha="right")
    ax.set_ylabel("count")
    ax.set_title("dialogue size per session")
    ax.legend()
    fig.tight_layout()
    size_path = outdir / "session_sizes.png"
    fig.savefig(size_path, dpi=120)
    plt.close(fig)
    written.append(size_path)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(rows) + 2), 3.2))
    ax.bar(list(positions), [r.key_points for r in rows], 0.5, color="#d0d0d0", label="key points")
    ax.bar(list(positions), [r.key_points_covered for r in rows], 0.5, color="#2b8a3e", label="covered")
    ax.set_xticks(list(positions), labels, rotation=20, ha="right")
    ax.set_ylabel("key points")
    ax.set_title("key-point coverage per session")
    ax.legend()
    fig.tight_layout()
    coverage_path = outdir / "coverage.png"
    fig.savefig(coverage_path, dpi=120)
    plt.close(fig)
    written.append(coverage_path)
    return written


def write_report(project: Project, outdir: Path) -> list[Path]:
    """Write stats.csv plus the figures into ``outdir``; returns the paths."""
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "stats.csv"
    write_csv(project, csv_path)
    return [csv_path] + render_figures(project, outdir)
