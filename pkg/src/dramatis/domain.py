"""Core value objects shared by every stage of the pipeline.

Scenes, characters, beliefs, actions, trajectories, and score records are
immutable dataclasses; once constructed they are safe to share across
concurrent scene runs. Validation is data, not exceptions: `validate_scene`
returns a list of violations with machine-readable codes so callers can
distinguish hard errors from advisory warnings.

File formats: a scene is one JSON document; a trajectory is a line-oriented
JSONL file (one step per line) so runs can stream-append safely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

LANGUAGES = ("en", "zh")
ORIGINS = ("extracted", "generated")
ACTION_KINDS = ("act", "speak", "react")

# Seven rubric metrics, in canonical report order.
METRICS = ("ka", "ba", "ee", "pt", "im", "ad", "bc")
METRIC_LABELS = {
    "ka": "Knowledge Accuracy",
    "ba": "Behavioral Accuracy",
    "ee": "Emotional Expression",
    "pt": "Personality Traits",
    "im": "Immersion",
    "ad": "Adaptability",
    "bc": "Behavioral Coherence",
}
# Metric groups used for reporting and reliability statistics.
DIMENSIONS = {
    "Character Fidelity": ("ka", "ba"),
    "Human-Likeness": ("ee", "pt"),
    "Consistency": ("im", "ad", "bc"),
}

SCENE_QUALITY_ASPECTS = ("creativity", "coherence", "conformity", "detail")


class SceneFormatError(ValueError):
    """A scene or trajectory document could not be parsed; names the bad field."""


@dataclass(frozen=True)
class Environment:
    time: str
    location: str
    description: str


@dataclass(frozen=True)
class CharacterProfile:
    name: str
    role: str
    profile: str
    position: str
    state: str


@dataclass(frozen=True)
class SelfBelief:
    belief: str
    desire: str
    intention: str


@dataclass(frozen=True)
class EnvBelief:
    perception_of_others: str
    understanding_of_scene: str
    influence_on_actions: str


@dataclass(frozen=True)
class Scene:
    id: str
    title: str
    language: str
    origin: str
    environment: Environment
    characters: tuple[CharacterProfile, ...]

    def character(self, name: str) -> CharacterProfile:
        for c in self.characters:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def roster(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.characters)


@dataclass(frozen=True)
class Action:
    actor: str
    kind: str
    text: str
    round: int


@dataclass(frozen=True)
class Influence:
    actor: str
    target: str
    impact: str

    @property
    def has_responder(self) -> bool:
        # target == actor is the canonical "nobody else is affected" encoding.
        return self.target != self.actor


@dataclass(frozen=True)
class InteractionResult:
    text: str


@dataclass(frozen=True)
class TrajectoryStep:
    observation: str
    action: Action


@dataclass(frozen=True)
class Trajectory:
    scene_id: str
    character: CharacterProfile
    environment: Environment
    steps: tuple[TrajectoryStep, ...]


def _validate_score(name: str, value: float) -> float:
    v = float(value)
    if not 1.0 <= v <= 5.0:
        raise ValueError(f"{name} must lie in [1, 5], got {value!r}")
    return v


@dataclass(frozen=True)
class MetricScores:
    ka: float
    ba: float
    ee: float
    pt: float
    im: float
    ad: float
    bc: float
    critique: str = ""

    def __post_init__(self) -> None:
        for m in METRICS:
            _validate_score(m, getattr(self, m))

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    @property
    def mean(self) -> float:
        return sum(self.as_dict().values()) / len(METRICS)


@dataclass(frozen=True)
class SceneQuality:
    coherence: float
    conformity: float
    detail: float
    creativity: float | None = None  # absent for extracted scenes

    def __post_init__(self) -> None:
        for name in ("coherence", "conformity", "detail"):
            _validate_score(name, getattr(self, name))
        if self.creativity is not None:
            _validate_score("creativity", self.creativity)

    def aspects(self) -> dict[str, float]:
        """Present aspects only (creativity omitted when not scored)."""
        out = {}
        if self.creativity is not None:
            out["creativity"] = self.creativity
        out.update(coherence=self.coherence, conformity=self.conformity, detail=self.detail)
        return out


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    severity: str = "error"  # "error" | "warning"

    @property
    def is_warning(self) -> bool:
        return self.severity == "warning"


def validate_scene(scene: Scene) -> list[Violation]:
    """Check every scene invariant; returns [] when fully valid.

    Hard problems come back as errors; a character count outside [2, 4]
    is only a warning (solo and crowd scenes run, they just fall outside
    the usual roster size).
    """
    out: list[Violation] = []

    def err(code: str, message: str) -> None:
        out.append(Violation(code, message))

    if not scene.id.strip():
        err("EmptyField", "scene id is empty")
    if not scene.title.strip():
        err("EmptyField", "scene title is empty")
    if scene.language not in LANGUAGES:
        err("BadLanguage", f"language must be one of {LANGUAGES}, got {scene.language!r}")
    if scene.origin not in ORIGINS:
        err("BadOrigin", f"origin must be one of {ORIGINS}, got {scene.origin!r}")

    for fname in ("time", "location", "description"):
        if not getattr(scene.environment, fname).strip():
            err("EmptyField", f"environment.{fname} is empty")

    if len(scene.characters) < 1:
        err("NoCharacters", "scene has no characters")
    seen: set[str] = set()
    for c in scene.characters:
        if not c.name.strip():
            err("EmptyField", "character with empty name")
        elif c.name in seen:
            err("DuplicateName", f"duplicate character name {c.name!r}")
        seen.add(c.name)

    if scene.characters and not 2 <= len(scene.characters) <= 4:
        out.append(Violation(
            "CharacterCountWarning",
            f"{len(scene.characters)} characters; typical scenes have 2-4",
            severity="warning",
        ))
    return out


def scene_errors(scene: Scene) -> list[Violation]:
    return [v for v in validate_scene(scene) if not v.is_warning]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, where: str) -> object:
    if key not in doc:
        raise SceneFormatError(f"missing field: {where}{key}")
    return doc[key]


def _require_str(doc: dict, key: str, where: str = "") -> str:
    value = _require(doc, key, where)
    if not isinstance(value, str):
        raise SceneFormatError(f"field {where}{key} must be a string, got {type(value).__name__}")
    return value.strip()


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "title": scene.title,
        "language": scene.language,
        "origin": scene.origin,
        "environment": {
            "time": scene.environment.time,
            "location": scene.environment.location,
            "description": scene.environment.description,
        },
        "characters": [
            {
                "name": c.name,
                "role": c.role,
                "profile": c.profile,
                "position": c.position,
                "state": c.state,
            }
            for c in scene.characters
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    env_doc = _require(doc, "environment", "")
    if not isinstance(env_doc, dict):
        raise SceneFormatError("field environment must be an object")
    chars_doc = _require(doc, "characters", "")
    if not isinstance(chars_doc, list):
        raise SceneFormatError("field characters must be a list")
    environment = Environment(
        time=_require_str(env_doc, "time", "environment."),
        location=_require_str(env_doc, "location", "environment."),
        description=_require_str(env_doc, "description", "environment."),
    )
    characters = tuple(
        CharacterProfile(
            name=_require_str(c, "name", f"characters[{i}]."),
            role=_require_str(c, "role", f"characters[{i}]."),
            profile=_require_str(c, "profile", f"characters[{i}]."),
            position=_require_str(c, "position", f"characters[{i}]."),
            state=_require_str(c, "state", f"characters[{i}]."),
        )
        for i, c in enumerate(chars_doc)
    )
    return Scene(
        id=_require_str(doc, "id"),
        title=_require_str(doc, "title"),
        language=_require_str(doc, "language"),
        origin=_require_str(doc, "origin"),
        environment=environment,
        characters=characters,
    )


def store_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scene_to_dict(scene), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_scene(path: str | Path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"not valid JSON: {path}: {e}") from e
    if not isinstance(doc, dict):
        raise SceneFormatError(f"scene document must be a JSON object: {path}")
    return scene_from_dict(doc)


def load_scene_dir(directory: str | Path) -> list[Scene]:
    """Load every *.json scene in a directory, sorted by filename.

    Files whose name starts with an underscore are metadata (crafting
    reports and the like), not scenes. Duplicate scene ids across the
    corpus are a format error.
    """
    scenes: list[Scene] = []
    seen: dict[str, str] = {}
    for path in sorted(Path(directory).glob("*.json")):
        if path.name.startswith("_"):
            continue
        scene = load_scene(path)
        if scene.id in seen:
            raise SceneFormatError(
                f"duplicate scene id {scene.id!r} in {path.name} (already in {seen[scene.id]})"
            )
        seen[scene.id] = path.name
        scenes.append(scene)
    return scenes


def trajectory_step_to_record(traj: Trajectory, seq: int, step: TrajectoryStep) -> dict:
    return {
        "scene_id": traj.scene_id,
        "character": traj.character.name,
        "round": step.action.round,
        "seq": seq,
        "observation": step.observation,
        "action_kind": step.action.kind,
        "action_text": step.action.text,
    }


def store_trajectory(traj: Trajectory, path: str | Path) -> None:
    lines = []
    for seq, step in enumerate(traj.steps):
        record = trajectory_step_to_record(traj, seq, step)
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_trajectory(path: str | Path, scene: Scene) -> Trajectory:
    """Rebuild a trajectory from its step records plus the owning scene.

    The step file carries only per-step data; the character and environment
    snapshots come from the scene document (both are scene-start values).
    """
    steps: list[TrajectoryStep] = []
    name: str | None = None
    scene_id: str | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise SceneFormatError(f"{path}:{lineno}: bad step record: {e}") from e
        for key in ("scene_id", "character", "round", "seq", "observation", "action_kind", "action_text"):
            if key not in rec:
                raise SceneFormatError(f"{path}:{lineno}: missing field: {key}")
        name = rec["character"]
        scene_id = rec["scene_id"]
        steps.append(TrajectoryStep(
            observation=rec["observation"],
            action=Action(
                actor=rec["character"],
                kind=rec["action_kind"],
                text=rec["action_text"],
                round=int(rec["round"]),
            ),
        ))
    if name is None or scene_id is None:
        raise SceneFormatError(f"{path}: trajectory file has no steps")
    if scene_id != scene.id:
        raise SceneFormatError(f"{path}: steps belong to scene {scene_id!r}, not {scene.id!r}")
    return Trajectory(
        scene_id=scene.id,
        character=scene.character(name),
        environment=scene.environment,
        steps=tuple(steps),
    )


def metric_scores_to_dict(scores: MetricScores) -> dict:
    doc: dict = {m: getattr(scores, m) for m in METRICS}
    doc["critique"] = scores.critique
    return doc


def metric_scores_from_dict(doc: dict) -> MetricScores:
    missing = [m for m in METRICS if m not in doc]
    if missing:
        raise SceneFormatError(f"missing metric fields: {', '.join(missing)}")
    return MetricScores(critique=doc.get("critique", ""), **{m: float(doc[m]) for m in METRICS})


def new_profile(profile: CharacterProfile, *, position: str | None = None,
                state: str | None = None) -> CharacterProfile:
    """Copy a profile with a fresh position and/or state."""
    updates: dict[str, str] = {}
    if position is not None:
        updates["position"] = position
    if state is not None:
        updates["state"] = state
    return replace(profile, **updates)


def ordered_unique(names: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for n in names:
        if n not in seen:
            seen.add(n)
            out.append(n)
    return out
