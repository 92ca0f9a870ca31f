"""Fine-tuning dataset construction from recorded trajectories.

Two routes to training pairs: guided takes the trajectories of the
top-ranked model per language as-is; reflective has a model critique its
own performance and rewrite each move against that critique. Both end
in step-level (instruction, response) pairs whose instruction is the
exact prompt the move answered, so a replay store recorded from the run
maps each instruction back to its response.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .characters import action_messages, reaction_messages
from .domain import Action, Trajectory, TrajectoryStep, load_scene, load_trajectory
from .evaluation import EvaluationRecord, aggregate, scene_block, transcript_block
from .gateway import (
    ChatRequest,
    DEFAULT_TEMPERATURE,
    Gateway,
    GatewayError,
    ROLE_CHARACTER,
    UsageLedger,
)
from .parsing import strip_brackets

logger = logging.getLogger(__name__)

KEEP_MARKER = "[KEEP]"

SOURCE_GUIDED = "guided"
SOURCE_REFLECTIVE = "reflective"


class DatasetError(RuntimeError):
    """Dataset construction cannot proceed."""


class SelectionError(DatasetError):
    """No usable teacher trajectories under the given policy."""


@dataclass(frozen=True)
class SftExample:
    instruction: str
    response: str
    meta: dict

    def to_dict(self) -> dict:
        return {"instruction": self.instruction, "response": self.response,
                "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, doc: dict) -> SftExample:
        return cls(instruction=doc["instruction"], response=doc["response"],
                   meta=dict(doc["meta"]))


@dataclass(frozen=True)
class TeacherTrajectory:
    """A trajectory tagged with what build_sft needs beyond the steps."""
    trajectory: Trajectory
    language: str
    teacher: str
    flagged_steps: tuple[int, ...] = ()


@dataclass(frozen=True)
class SelectionPolicy:
    min_mean: float | None = None   # drop trajectories whose 7-metric mean is below this

    def keeps(self, record: EvaluationRecord) -> bool:
        return self.min_mean is None or record.scores.mean >= self.min_mean


def load_runs_index(runs_root: str | Path) -> dict[str, tuple[Path, dict]]:
    """scene_id -> (run directory, manifest) for completed runs."""
    index: dict[str, tuple[Path, dict]] = {}
    for manifest_path in sorted(Path(runs_root).glob("*/manifest.json")):
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("status") == "completed":
            index[manifest["scene_id"]] = (manifest_path.parent, manifest)
    return index


def _load_teacher_trajectory(run_dir: Path, manifest: dict, character: str,
                             teacher: str) -> TeacherTrajectory:
    scene = load_scene(run_dir / "scene.json")
    rel_path = manifest["trajectory_files"][character]
    trajectory = load_trajectory(run_dir / rel_path, scene)
    return TeacherTrajectory(trajectory=trajectory, language=scene.language, teacher=teacher)


def select_guided(records: list[EvaluationRecord], runs_root: str | Path,
                  policy: SelectionPolicy | None = None) -> list[TeacherTrajectory]:
    """Trajectories of the top-ranked model per language.

    Ranking is the aggregate Average column; ties break to the
    lexicographically smallest model id, so selection is a pure function
    of the records.
    """
    if not records:
        raise SelectionError("no evaluation records to select from")
    policy = policy or SelectionPolicy()
    report = aggregate(records)
    teachers: dict[str, str] = {}
    for language in sorted({r.language for r in report.rows}):
        rows = [r for r in report.rows if r.language == language]
        best = max(r.average[0] for r in rows)
        teachers[language] = min(r.model for r in rows if r.average[0] == best)

    index = load_runs_index(runs_root)
    selected: list[TeacherTrajectory] = []
    for record in sorted(records, key=lambda r: (r.language, r.scene_id, r.character)):
        if record.model_under_test != teachers[record.language]:
            continue
        if not policy.keeps(record):
            continue
        if record.scene_id not in index:
            raise SelectionError(f"no completed run directory for scene {record.scene_id!r}")
        run_dir, manifest = index[record.scene_id]
        selected.append(_load_teacher_trajectory(run_dir, manifest, record.character,
                                                 record.model_under_test))
    if not selected:
        raise SelectionError("selection policy left no trajectories")
    return selected


def select_for_model(runs_root: str | Path, model: str) -> list[TeacherTrajectory]:
    """Every trajectory a given model produced, for self-reflection."""
    index = load_runs_index(runs_root)
    selected: list[TeacherTrajectory] = []
    for scene_id in sorted(index):
        run_dir, manifest = index[scene_id]
        for character, cast_model in sorted(manifest["cast"].items()):
            if cast_model == model:
                selected.append(_load_teacher_trajectory(run_dir, manifest, character, model))
    if not selected:
        raise SelectionError(f"no trajectories played by {model!r} under {runs_root}")
    return selected


def step_messages(trajectory: Trajectory, step: TrajectoryStep,
                  language: str) -> tuple[tuple[str, str], ...]:
    """The exact prompt the recorded move answered."""
    profile = trajectory.character
    env = trajectory.environment
    if step.action.kind == "react":
        return reaction_messages(profile, env, step.observation, language)
    return action_messages(profile, env, step.observation, language)


def build_sft(selected: list[TeacherTrajectory], *, source: str) -> list[SftExample]:
    """One example per step; instruction is the step's full prompt text."""
    if source not in (SOURCE_GUIDED, SOURCE_REFLECTIVE):
        raise ValueError(f"unknown source {source!r}")
    examples: list[SftExample] = []
    for item in selected:
        traj = item.trajectory
        for seq, step in enumerate(traj.steps):
            if not step.action.text.strip():
                raise DatasetError(
                    f"{traj.scene_id}/{traj.character.name}: step {seq} has an empty move")
            messages = step_messages(traj, step, item.language)
            instruction = "\n\n".join(content for _, content in messages)
            meta = {
                "scene_id": traj.scene_id,
                "character": traj.character.name,
                "source": source,
                "teacher": item.teacher,
                "language": item.language,
                "round": step.action.round,
                "seq": seq,
                "kind": step.action.kind,
            }
            if seq in item.flagged_steps:
                meta["rewrite_failed"] = True
            examples.append(SftExample(instruction=instruction,
                                       response=step.action.text, meta=meta))
    return examples


def reflective_rewrite(gateway: Gateway, trajectory: Trajectory, model: str,
                       language: str, ledger: UsageLedger,
                       *, temperature: float = DEFAULT_TEMPERATURE,
                       max_tokens: int = 1024) -> tuple[Trajectory, tuple[int, ...]]:
    """Self-critique then per-step rewrite; returns the revised trajectory
    and the indices of steps whose rewrite failed (originals retained).

    Step count and observations are untouched; only action texts change,
    and a reply of exactly [KEEP] keeps the recorded text.
    """
    if not trajectory.steps:
        raise ValueError("cannot rewrite an empty trajectory")
    name = trajectory.character.name

    def call(prompt: str) -> str:
        request = ChatRequest(model_id=model, messages=(("user", prompt),),
                              temperature=temperature, max_tokens=max_tokens)
        return gateway.complete(request, role=ROLE_CHARACTER, ledger=ledger).content.strip()

    critique_prompt = prompts.render("reflect_critique", language,
                                     character=name,
                                     scene=scene_block(trajectory),
                                     transcript=transcript_block(trajectory))
    critique = call(critique_prompt)

    new_steps: list[TrajectoryStep] = []
    flagged: list[int] = []
    for seq, step in enumerate(trajectory.steps):
        rewrite_prompt = prompts.render("reflect_rewrite", language,
                                        character=name, critique=critique,
                                        observation=step.observation,
                                        action=step.action.text)
        try:
            reply = call(rewrite_prompt)
        except GatewayError as e:
            logger.warning("rewrite failed for %s step %d: %s", name, seq, e)
            flagged.append(seq)
            new_steps.append(step)
            continue
        if strip_brackets(reply) == "KEEP":
            new_steps.append(step)
            continue
        revised = Action(actor=step.action.actor, kind=step.action.kind,
                         text=reply, round=step.action.round)
        new_steps.append(TrajectoryStep(observation=step.observation, action=revised))

    rewritten = Trajectory(scene_id=trajectory.scene_id, character=trajectory.character,
                           environment=trajectory.environment, steps=tuple(new_steps))
    return rewritten, tuple(flagged)


def reflective_examples(gateway: Gateway, selected: list[TeacherTrajectory],
                        model: str, ledger: UsageLedger) -> list[SftExample]:
    rewritten: list[TeacherTrajectory] = []
    for item in selected:
        traj, flagged = reflective_rewrite(gateway, item.trajectory, model,
                                           item.language, ledger)
        rewritten.append(TeacherTrajectory(trajectory=traj, language=item.language,
                                           teacher=model, flagged_steps=flagged))
    return build_sft(rewritten, source=SOURCE_REFLECTIVE)


def export_dataset(examples: list[SftExample], path: str | Path,
                   format: str = "lines") -> dict:
    """Write one JSON record per line; returns a manifest of counts."""
    if format != "lines":
        raise ValueError(f"unknown export format {format!r}")
    if not examples:
        raise DatasetError("nothing to export")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    by_source: dict[str, int] = {}
    by_teacher: dict[str, int] = {}
    by_language: dict[str, int] = {}
    with out.open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            by_source[ex.meta["source"]] = by_source.get(ex.meta["source"], 0) + 1
            by_teacher[ex.meta["teacher"]] = by_teacher.get(ex.meta["teacher"], 0) + 1
            by_language[ex.meta["language"]] = by_language.get(ex.meta["language"], 0) + 1
    return {
        "examples": len(examples),
        "by_source": dict(sorted(by_source.items())),
        "by_teacher": dict(sorted(by_teacher.items())),
        "by_language": dict(sorted(by_language.items())),
    }


def load_dataset(path: str | Path) -> list[SftExample]:
    examples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            examples.append(SftExample.from_dict(json.loads(line)))
    return examples
