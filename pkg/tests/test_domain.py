from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import pytest

from dramatis.domain import (
    Action,
    CharacterProfile,
    Environment,
    MetricScores,
    Scene,
    SceneFormatError,
    SceneQuality,
    Trajectory,
    TrajectoryStep,
    load_scene,
    load_scene_dir,
    load_trajectory,
    metric_scores_from_dict,
    metric_scores_to_dict,
    scene_errors,
    scene_from_dict,
    scene_to_dict,
    store_scene,
    store_trajectory,
    validate_scene,
)
from conftest import make_scene


def codes(violations):
    return sorted(v.code for v in violations)


def test_valid_scene_has_no_violations(scene):
    assert validate_scene(scene) == []


def test_roster_preserves_declaration_order():
    scene = make_scene(n_characters=4)
    assert scene.roster == ("Mara Voss", "Ellis Grey", "Tobin Hale", "Sera Quint")
    assert scene.character("Tobin Hale").role == "boatman"
    with pytest.raises(KeyError):
        scene.character("Nobody")


def test_empty_fields_are_errors(scene):
    bad = dataclasses.replace(scene, id=" ", title="")
    assert codes(scene_errors(bad)) == ["EmptyField", "EmptyField"]
    bad_env = dataclasses.replace(scene, environment=Environment("", "x", "y"))
    assert codes(scene_errors(bad_env)) == ["EmptyField"]


def test_language_and_origin_are_closed_sets(scene):
    bad = dataclasses.replace(scene, language="fr", origin="dreamt")
    assert codes(scene_errors(bad)) == ["BadLanguage", "BadOrigin"]


def test_duplicate_character_names_rejected(scene):
    twin = scene.characters[0]
    bad = dataclasses.replace(scene, characters=scene.characters + (twin,))
    assert "DuplicateName" in codes(validate_scene(bad))


def test_no_characters_is_an_error(scene):
    bad = dataclasses.replace(scene, characters=())
    assert "NoCharacters" in codes(scene_errors(bad))


def test_character_count_outside_2_to_4_only_warns():
    solo = make_scene(n_characters=1)
    violations = validate_scene(solo)
    assert codes(violations) == ["CharacterCountWarning"]
    assert all(v.is_warning for v in violations)
    assert scene_errors(solo) == []


def test_scene_dict_round_trip(scene):
    assert scene_from_dict(scene_to_dict(scene)) == scene


def test_scene_file_round_trip(tmp_path, scene):
    path = tmp_path / "s.json"
    store_scene(scene, path)
    assert load_scene(path) == scene


def test_load_scene_rejects_missing_fields(tmp_path, scene):
    doc = scene_to_dict(scene)
    del doc["environment"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SceneFormatError, match="environment"):
        load_scene(path)


def test_load_scene_rejects_non_json(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("not json {", encoding="utf-8")
    with pytest.raises(SceneFormatError, match="JSON"):
        load_scene(path)


def test_scene_dir_rejects_duplicate_ids(tmp_path, scene):
    store_scene(scene, tmp_path / "a.json")
    store_scene(scene, tmp_path / "b.json")
    with pytest.raises(SceneFormatError, match="duplicate scene id"):
        load_scene_dir(tmp_path)


def test_scene_dir_skips_underscore_metadata(tmp_path, scene):
    store_scene(scene, tmp_path / "a.json")
    (tmp_path / "_craft_report.json").write_text("{}", encoding="utf-8")
    assert [s.id for s in load_scene_dir(tmp_path)] == [scene.id]


def _trajectory(scene: Scene) -> Trajectory:
    c = scene.characters[0]
    steps = tuple(
        TrajectoryStep(observation=f"round {r} observation",
                       action=Action(actor=c.name, kind=kind, text=f"move {r}", round=r))
        for r, kind in ((1, "act"), (1, "react"), (2, "speak"))
    )
    return Trajectory(scene_id=scene.id, character=c,
                      environment=scene.environment, steps=steps)


def test_trajectory_file_round_trip(tmp_path, scene):
    traj = _trajectory(scene)
    path = tmp_path / "t.jsonl"
    store_trajectory(traj, path)
    assert load_trajectory(path, scene) == traj


def test_trajectory_rejects_scene_mismatch(tmp_path, scene):
    store_trajectory(_trajectory(scene), tmp_path / "t.jsonl")
    other = make_scene(scene_id="other-en-001")
    with pytest.raises(SceneFormatError, match="scene"):
        load_trajectory(tmp_path / "t.jsonl", other)


def test_metric_scores_bounds():
    MetricScores(1.0, 5.0, 3.0, 3.5, 2.5, 4.0, 4.5)
    with pytest.raises(ValueError, match=r"\[1, 5\]"):
        MetricScores(0.5, 5.0, 3.0, 3.5, 2.5, 4.0, 4.5)
    with pytest.raises(ValueError):
        MetricScores(1.0, 5.5, 3.0, 3.5, 2.5, 4.0, 4.5)


def test_metric_scores_mean_and_round_trip():
    scores = MetricScores(1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 2.0, critique="even keel")
    assert scores.mean == pytest.approx(3.0)
    assert metric_scores_from_dict(metric_scores_to_dict(scores)) == scores
    with pytest.raises(SceneFormatError, match="missing metric"):
        metric_scores_from_dict({"ka": 3.0})


def test_scene_quality_aspects_omit_unscored_creativity():
    extracted = SceneQuality(coherence=4.0, conformity=3.5, detail=4.5)
    assert "creativity" not in extracted.aspects()
    generated = SceneQuality(coherence=4.0, conformity=3.5, detail=4.5, creativity=3.0)
    assert generated.aspects()["creativity"] == 3.0
    with pytest.raises(ValueError):
        SceneQuality(coherence=0.0, conformity=3.0, detail=3.0)


def test_fixture_corpus_loads_clean():
    corpus_dir = Path(__file__).parent / "fixtures" / "scenes"
    scenes = load_scene_dir(corpus_dir)
    assert len(scenes) == 10
    assert len({s.id for s in scenes}) == 10
    for scene in scenes:
        assert scene_errors(scene) == [], scene.id
    assert {s.language for s in scenes} == {"en", "zh"}
    assert {s.origin for s in scenes} == {"extracted", "generated"}
    assert all(2 <= len(s.characters) <= 4 for s in scenes)
