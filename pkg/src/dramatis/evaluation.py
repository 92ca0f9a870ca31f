"""Trajectory scoring, aggregation, and reliability statistics.

Scoring is critique-then-score: the judge first writes a free-text
critique of one character's trajectory, then a second call embeds that
critique and asks for the seven metric lines. Aggregation averages
trajectory scores up to scene level, then scene scores up to model
level, per language; the Average column is the mean of the seven metric
means per scene, aggregated the same way.

Aggregation arithmetic is deliberately plain Python (sums and square
roots) so reported numbers equal hand computation exactly; the two
reliability statistics use numpy and are verified against independent
direct-formula oracles in the tests.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import prompts
from .domain import (
    DIMENSIONS,
    METRICS,
    MetricScores,
    Scene,
    Trajectory,
    load_scene,
    load_trajectory,
    metric_scores_from_dict,
    metric_scores_to_dict,
)
from .gateway import (
    ChatRequest,
    Gateway,
    JUDGE_TEMPERATURE,
    GatewayError,
    ParseRepairError,
    ROLE_JUDGE,
    UsageLedger,
    complete_parsed,
)
from .parsing import parse_metric_scores

logger = logging.getLogger(__name__)

SCORE_REMINDER = ("reply with exactly seven lines, one per criterion, e.g. "
                  "'Knowledge Accuracy: 4'; scores are 1-5, halves allowed")


class StatisticError(ValueError):
    """A statistic is undefined for the given input."""


class ScoringError(RuntimeError):
    """The judge never produced parseable scores for a trajectory."""


# ---------------------------------------------------------------------------
# Judge scoring
# ---------------------------------------------------------------------------

def trajectory_id(scene_id: str, character: str, model: str) -> str:
    return f"{scene_id}/{character}/{model}"


@dataclass(frozen=True)
class EvaluationRecord:
    trajectory_id: str
    model_under_test: str
    judge: str
    scores: MetricScores
    scene_id: str
    language: str
    character: str

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "model_under_test": self.model_under_test,
            "judge": self.judge,
            "scene_id": self.scene_id,
            "language": self.language,
            "character": self.character,
            "scores": metric_scores_to_dict(self.scores),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> EvaluationRecord:
        return cls(
            trajectory_id=doc["trajectory_id"],
            model_under_test=doc["model_under_test"],
            judge=doc["judge"],
            scene_id=doc["scene_id"],
            language=doc["language"],
            character=doc["character"],
            scores=metric_scores_from_dict(doc["scores"]),
        )


def scene_block(trajectory: Trajectory) -> str:
    """The scene context a judge sees: environment plus the character sheet."""
    c = trajectory.character
    return "\n".join([
        prompts.env_block(trajectory.environment),
        f"Name: {c.name}",
        f"Role: {c.role}",
        f"Profile: {c.profile}",
        f"Position: {c.position}",
        f"State: {c.state}",
    ])


def transcript_block(trajectory: Trajectory) -> str:
    """Steps rendered with their observations, so the judge sees what the
    character saw when it chose each move."""
    parts = []
    for i, step in enumerate(trajectory.steps, 1):
        parts.append(f"{i}. Observation: {step.observation}\n"
                     f"   Move ({step.action.kind}): {step.action.text}")
    return "\n".join(parts)


def score_trajectory(gateway: Gateway, trajectory: Trajectory, judge_model: str,
                     language: str, ledger: UsageLedger) -> MetricScores:
    """Two judge calls: critique, then scores with the critique embedded."""
    if not trajectory.steps:
        raise ValueError("cannot score an empty trajectory")
    scene_text = scene_block(trajectory)
    transcript = transcript_block(trajectory)
    name = trajectory.character.name

    critique_prompt = prompts.render("critique", language, scene=scene_text,
                                     transcript=transcript, character=name)
    critique_request = ChatRequest(model_id=judge_model,
                                   messages=(("user", critique_prompt),),
                                   temperature=JUDGE_TEMPERATURE, max_tokens=1024)
    try:
        critique = gateway.complete(critique_request, role=ROLE_JUDGE,
                                    ledger=ledger).content.strip()
    except GatewayError as e:
        raise ScoringError(f"critique call failed: {e}") from e

    score_prompt = prompts.render("score", language, scene=scene_text,
                                  transcript=transcript, character=name,
                                  critique=critique)
    score_request = ChatRequest(model_id=judge_model,
                                messages=(("user", score_prompt),),
                                temperature=JUDGE_TEMPERATURE, max_tokens=256)

    def parse(reply: str) -> MetricScores:
        return parse_metric_scores(reply, critique=critique)

    try:
        return complete_parsed(gateway, score_request, parse, role=ROLE_JUDGE,
                               ledger=ledger, reminder=SCORE_REMINDER)
    except (ParseRepairError, GatewayError) as e:
        raise ScoringError(f"scoring failed for {name}: {e}") from e


def evaluate_runs(runs_root: str | Path, judge_model: str, gateway: Gateway,
                  ledger: UsageLedger) -> tuple[list[EvaluationRecord], list[dict]]:
    """Score every trajectory of every completed run under runs_root.

    Returns (records, exclusions); a trajectory the judge cannot score is
    excluded with a reason, never imputed.
    """
    records: list[EvaluationRecord] = []
    excluded: list[dict] = []
    for manifest_path in sorted(Path(runs_root).glob("*/manifest.json")):
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("status") != "completed":
            excluded.append({"run": manifest.get("scene_id", manifest_path.parent.name),
                             "reason": f"run status {manifest.get('status')!r}"})
            continue
        run_dir = manifest_path.parent
        scene = load_scene(run_dir / "scene.json")
        for character, rel_path in sorted(manifest["trajectory_files"].items()):
            trajectory = load_trajectory(run_dir / rel_path, scene)
            model = manifest["cast"][character]
            tid = trajectory_id(scene.id, character, model)
            try:
                scores = score_trajectory(gateway, trajectory, judge_model,
                                          scene.language, ledger)
            except (ScoringError, ValueError) as e:
                excluded.append({"trajectory_id": tid, "reason": str(e)})
                continue
            records.append(EvaluationRecord(
                trajectory_id=tid, model_under_test=model, judge=judge_model,
                scores=scores, scene_id=scene.id, language=scene.language,
                character=character,
            ))
    return records, excluded


def store_records(records: list[EvaluationRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[EvaluationRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(EvaluationRecord.from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Aggregation (plain arithmetic, exactly reproducible by hand)
# ---------------------------------------------------------------------------

def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _sample_std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    m = _mean(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))


@dataclass(frozen=True)
class ModelAggregate:
    language: str
    model: str
    scene_count: int
    metric_stats: dict[str, tuple[float, float]]      # metric -> (mean, std)
    dimension_stats: dict[str, tuple[float, float]]   # dimension -> (mean, std)
    average: tuple[float, float]
    single_scene: bool                                # std degenerate at n=1


@dataclass(frozen=True)
class AggregateReport:
    rows: tuple[ModelAggregate, ...]
    record_count: int
    excluded_count: int = 0

    def row(self, language: str, model: str) -> ModelAggregate:
        for r in self.rows:
            if (r.language, r.model) == (language, model):
                return r
        raise KeyError((language, model))

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "excluded_count": self.excluded_count,
            "rows": [
                {
                    "language": r.language,
                    "model": r.model,
                    "scene_count": r.scene_count,
                    "single_scene": r.single_scene,
                    "metrics": {m: {"mean": s[0], "std": s[1]}
                                for m, s in r.metric_stats.items()},
                    "dimensions": {d: {"mean": s[0], "std": s[1]}
                                   for d, s in r.dimension_stats.items()},
                    "average": {"mean": r.average[0], "std": r.average[1]},
                }
                for r in self.rows
            ],
        }


def aggregate(records: list[EvaluationRecord], *, excluded_count: int = 0) -> AggregateReport:
    """Scene means, then model means over scenes, per (language, model).

    The Average column is the mean of the seven per-scene metric means,
    aggregated across scenes like any metric. Standard deviations are
    sample (n-1) over scene scores; a single scene reports 0 and is
    flagged.
    """
    if not records:
        return AggregateReport(rows=(), record_count=0, excluded_count=excluded_count)

    by_cell: dict[tuple[str, str, str], list[EvaluationRecord]] = {}
    for r in records:
        by_cell.setdefault((r.language, r.model_under_test, r.scene_id), []).append(r)

    by_model: dict[tuple[str, str], dict[str, dict[str, float]]] = {}
    for (language, model, scene_id), cell in sorted(by_cell.items()):
        scene_scores = {m: _mean([rec.scores.as_dict()[m] for rec in cell]) for m in METRICS}
        scene_scores["average"] = _mean([scene_scores[m] for m in METRICS])
        by_model.setdefault((language, model), {})[scene_id] = scene_scores

    rows = []
    for (language, model), scenes in sorted(by_model.items()):
        ordered = [scenes[sid] for sid in sorted(scenes)]
        metric_stats = {}
        for m in METRICS:
            values = [s[m] for s in ordered]
            metric_stats[m] = (_mean(values), _sample_std(values))
        dimension_stats = {}
        for dim, members in DIMENSIONS.items():
            values = [_mean([s[m] for m in members]) for s in ordered]
            dimension_stats[dim] = (_mean(values), _sample_std(values))
        averages = [s["average"] for s in ordered]
        rows.append(ModelAggregate(
            language=language, model=model, scene_count=len(ordered),
            metric_stats=metric_stats, dimension_stats=dimension_stats,
            average=(_mean(averages), _sample_std(averages)),
            single_scene=len(ordered) == 1,
        ))
    return AggregateReport(rows=tuple(rows), record_count=len(records),
                           excluded_count=excluded_count)


def render_report(report: AggregateReport) -> str:
    """Aligned text table: one section per language, models as rows,
    metric columns plus the Average column, cells mean+-std."""
    if not report.rows:
        return "(no evaluation records)\n"
    headers = [m.upper() for m in METRICS] + ["Average"]
    lines: list[str] = []
    for language in sorted({r.language for r in report.rows}):
        rows = [r for r in report.rows if r.language == language]
        name_width = max(len("Model"), max(len(r.model) for r in rows))
        lines.append(f"Language: {language}")
        cells_header = "  ".join(f"{h:>11}" for h in headers)
        lines.append(f"{'Model':<{name_width}}  {cells_header}")
        for r in rows:
            cells = []
            for m in METRICS:
                mean, std = r.metric_stats[m]
                cells.append(f"{mean:.2f}±{std:.2f}")
            mean, std = r.average
            cells.append(f"{mean:.2f}±{std:.2f}")
            joined = "  ".join(f"{c:>11}" for c in cells)
            flag = "  (n=1)" if r.single_scene else ""
            lines.append(f"{r.model:<{name_width}}  {joined}{flag}")
        lines.append("")
    if report.excluded_count:
        lines.append(f"excluded trajectories: {report.excluded_count}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Reliability and validity statistics
# ---------------------------------------------------------------------------

def cronbach_alpha(matrix) -> float:
    """Internal consistency over items (columns) and observations (rows).

    alpha = k/(k-1) * (1 - sum(item variances) / variance(row totals)),
    sample variance throughout.
    """
    data = np.asarray(matrix, dtype=float)
    if data.ndim != 2:
        raise StatisticError("matrix must be two-dimensional")
    n_rows, n_items = data.shape
    if n_items < 2:
        raise StatisticError("need at least 2 items")
    if n_rows < 2:
        raise StatisticError("need at least 2 observation rows")
    item_vars = data.var(axis=0, ddof=1)
    total_var = data.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise StatisticError("row-total variance is zero; alpha undefined")
    return float(n_items / (n_items - 1) * (1.0 - item_vars.sum() / total_var))


def pearson(xs, ys) -> float:
    """Product-moment correlation of two equal-length sequences."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise StatisticError("inputs must be equal-length vectors")
    if x.size < 2:
        raise StatisticError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if denom == 0:
        raise StatisticError("constant input; correlation undefined")
    return float((dx * dy).sum() / denom)


def reliability_report(records: list[EvaluationRecord]) -> dict:
    """Cronbach's alpha per dimension per language.

    Observation unit: one (model, scene) pair, items = that dimension's
    metrics averaged to scene level first.
    """
    by_cell: dict[tuple[str, str, str], list[EvaluationRecord]] = {}
    for r in records:
        by_cell.setdefault((r.language, r.model_under_test, r.scene_id), []).append(r)
    out: dict[str, dict[str, float | str]] = {}
    for language in sorted({key[0] for key in by_cell}):
        cells = sorted(key for key in by_cell if key[0] == language)
        rows_by_metric = {
            m: [_mean([rec.scores.as_dict()[m] for rec in by_cell[key]]) for key in cells]
            for m in METRICS
        }
        out[language] = {}
        for dim, members in DIMENSIONS.items():
            matrix = [[rows_by_metric[m][i] for m in members] for i in range(len(cells))]
            try:
                out[language][dim] = cronbach_alpha(matrix)
            except StatisticError as e:
                out[language][dim] = f"undefined ({e})"
    return out


def parse_human_scores(path: str | Path) -> dict[str, dict[str, float]]:
    """Human annotation file: delimited text, header trajectory_id, KA..BC."""
    out: dict[str, dict[str, float]] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise StatisticError(f"{path}: empty human-score file")
        field_map: dict[str, str] = {}
        for m in METRICS:
            matches = [f for f in reader.fieldnames if f.strip().lower() == m]
            if not matches:
                raise StatisticError(f"{path}: missing column for metric {m.upper()}")
            field_map[m] = matches[0]
        id_fields = [f for f in reader.fieldnames if f.strip().lower() == "trajectory_id"]
        if not id_fields:
            raise StatisticError(f"{path}: missing trajectory_id column")
        for row in reader:
            tid = row[id_fields[0]].strip()
            scores = {m: float(row[field_map[m]]) for m in METRICS}
            for m, v in scores.items():
                if not 1.0 <= v <= 5.0:
                    raise StatisticError(f"{path}: {tid}: {m.upper()} score {v} outside [1, 5]")
            out[tid] = scores
    return out


def validity_report(auto_records: list[EvaluationRecord],
                    human_scores: dict[str, dict[str, float]]) -> dict:
    """Per-metric and overall Pearson between judge and human scores.

    Overall correlates the per-trajectory means of the seven metrics.
    """
    by_id = {r.trajectory_id: r for r in auto_records}
    matched = sorted(set(by_id) & set(human_scores))
    if len(matched) < 2:
        raise StatisticError(f"only {len(matched)} matched trajectories; need at least 2")
    per_metric: dict[str, float | str] = {}
    for m in METRICS:
        auto = [by_id[t].scores.as_dict()[m] for t in matched]
        human = [human_scores[t][m] for t in matched]
        try:
            per_metric[m] = pearson(auto, human)
        except StatisticError as e:
            per_metric[m] = f"undefined ({e})"
    auto_overall = [_mean(list(by_id[t].scores.as_dict().values())) for t in matched]
    human_overall = [_mean(list(human_scores[t].values())) for t in matched]
    try:
        overall: float | str = pearson(auto_overall, human_overall)
    except StatisticError as e:
        overall = f"undefined ({e})"
    judges = sorted({r.judge for r in auto_records})
    return {
        "judge": judges[0] if len(judges) == 1 else ", ".join(judges),
        "matched": len(matched),
        "per_metric": per_metric,
        "overall": overall,
    }


def render_validity(report: dict) -> str:
    headers = [m.upper() for m in METRICS] + ["Overall"]
    values = [report["per_metric"][m] for m in METRICS] + [report["overall"]]
    cells = [f"{v:.3f}" if isinstance(v, float) else "n/a" for v in values]
    name_width = max(len("Judge"), len(report["judge"]))
    lines = [
        f"{'Judge':<{name_width}}  " + "  ".join(f"{h:>7}" for h in headers),
        f"{report['judge']:<{name_width}}  " + "  ".join(f"{c:>7}" for c in cells),
        f"(matched trajectories: {report['matched']})",
    ]
    return "\n".join(lines) + "\n"


def render_reliability(report: dict) -> str:
    lines = []
    for language, dims in report.items():
        lines.append(f"Language: {language}")
        for dim in DIMENSIONS:
            value = dims[dim]
            shown = f"{value:.3f}" if isinstance(value, float) else str(value)
            lines.append(f"  {dim:<18} {shown}")
    return "\n".join(lines) + "\n"
