from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from conftest import make_scene
from dramatis.cli import main
from dramatis.domain import store_scene
from dramatis.evaluation import load_records
from dramatis.factory import load_dataset


def tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def scene_dir(tmp_path) -> Path:
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    store_scene(make_scene(scene_id="cli-en-001"), scenes / "cli-en-001.json")
    store_scene(make_scene(scene_id="cli-en-002", title="Second Watch"),
                scenes / "cli-en-002.json")
    return scenes


def test_pipeline_run_eval_stats_export(tmp_path, scene_dir, capsys):
    runs = tmp_path / "runs"
    records_path = tmp_path / "records.jsonl"

    rc = main(["run", "--scene", str(scene_dir), "--cast", "student-model",
               "--narrator", "narrator-model", "--rounds", "1", "--out", str(runs)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cli-en-001: completed" in out
    assert "cli-en-002: completed" in out
    assert (runs / "manifest.json").exists()
    assert (runs / "cli-en-001" / "events.jsonl").exists()

    rc = main(["eval", "--runs", str(runs), "--judge", "synthetic-judge",
               "--out", str(records_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "Language: en" in out
    records = load_records(records_path)
    assert len(records) == 4  # two scenes, two characters each
    report_doc = json.loads(records_path.with_suffix(".report.json")
                            .read_text(encoding="utf-8"))
    assert report_doc["aggregate"]["record_count"] == 4
    assert report_doc["excluded"] == []

    human_path = tmp_path / "human.csv"
    lines = ["trajectory_id,KA,BA,EE,PT,IM,AD,BC"]
    for r in records:
        scores = r.scores.as_dict()
        lines.append(r.trajectory_id + "," + ",".join(
            str(scores[m]) for m in ("ka", "ba", "ee", "pt", "im", "ad", "bc")))
    human_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    stats_out = tmp_path / "stats.json"
    rc = main(["stats", "--records", str(records_path), "--human", str(human_path),
               "--out", str(stats_out)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "Cronbach" in out
    assert "Pearson" in out
    stats_doc = json.loads(stats_out.read_text(encoding="utf-8"))
    assert set(stats_doc) == {"aggregate", "reliability", "validity"}
    assert stats_doc["validity"]["matched"] == 4

    guided_path = tmp_path / "guided.jsonl"
    rc = main(["export-sft", "--method", "guided", "--runs", str(runs),
               "--records", str(records_path), "--out", str(guided_path)])
    assert rc == 0
    guided = load_dataset(guided_path)
    assert guided
    assert all(ex.meta["source"] == "guided" for ex in guided)
    manifest = json.loads(guided_path.with_suffix(".manifest.json")
                          .read_text(encoding="utf-8"))
    assert manifest["examples"] == len(guided)

    reflective_path = tmp_path / "reflective.jsonl"
    rc = main(["export-sft", "--method", "reflective", "--runs", str(runs),
               "--model", "student-model", "--out", str(reflective_path)])
    assert rc == 0
    reflective = load_dataset(reflective_path)
    assert all(ex.meta["source"] == "reflective" for ex in reflective)
    assert all(ex.meta["teacher"] == "student-model" for ex in reflective)
    # reflective covers every student trajectory step across both scenes
    assert len(reflective) >= len(guided)


def test_craft_writes_scenes_and_report(tmp_path, capsys):
    source = tmp_path / "source.txt"
    source.write_text("Mara Voss keeps the light. Ellis Grey arrives to audit "
                      "the logbook after a wreck off the point.", encoding="utf-8")
    out = tmp_path / "crafted"
    rc = main(["craft", "--source", str(source), "--extract", "1", "--generate", "1",
               "--out", str(out)])
    assert rc == 0
    assert "accepted 2" in capsys.readouterr().out
    names = sorted(p.name for p in out.iterdir())
    assert names == ["_craft_report.json", "crafted-en-ext-001.json",
                     "crafted-en-gen-001.json"]
    report = json.loads((out / "_craft_report.json").read_text(encoding="utf-8"))
    assert report["accepted"] == 2

    # the crafted directory is directly runnable: the report file is metadata,
    # not a scene
    runs = tmp_path / "crafted-runs"
    rc = main(["run", "--scene", str(out), "--cast", "student-model",
               "--narrator", "narrator-model", "--rounds", "1", "--out", str(runs)])
    assert rc == 0


def test_run_accepts_cast_file_with_default(tmp_path, scene_dir):
    cast_path = tmp_path / "cast.json"
    cast_path.write_text(json.dumps({"*": "base-model", "Mara Voss": "keeper-model"}),
                         encoding="utf-8")
    runs = tmp_path / "runs"
    rc = main(["run", "--scene", str(scene_dir / "cli-en-001.json"),
               "--cast", str(cast_path), "--narrator", "narrator-model",
               "--rounds", "1", "--out", str(runs)])
    assert rc == 0
    manifest = json.loads((runs / "cli-en-001" / "manifest.json")
                          .read_text(encoding="utf-8"))
    assert manifest["cast"] == {"Mara Voss": "keeper-model", "Ellis Grey": "base-model"}


def test_run_requires_a_model_for_every_character(tmp_path, scene_dir):
    cast_path = tmp_path / "cast.json"
    cast_path.write_text(json.dumps({"Mara Voss": "keeper-model"}), encoding="utf-8")
    with pytest.raises(SystemExit, match="no model for Ellis Grey"):
        main(["run", "--scene", str(scene_dir / "cli-en-001.json"),
              "--cast", str(cast_path), "--narrator", "n",
              "--out", str(tmp_path / "runs")])


def test_record_then_replay_reproduces_runs_byte_for_byte(tmp_path, scene_dir):
    store = tmp_path / "store"
    first = tmp_path / "first"
    again = tmp_path / "again"
    rc = main(["run", "--scene", str(scene_dir), "--cast", "student-model",
               "--narrator", "narrator-model", "--rounds", "1",
               "--record", str(store), "--out", str(first)])
    assert rc == 0
    assert any(store.iterdir())
    rc = main(["run", "--scene", str(scene_dir), "--cast", "student-model",
               "--narrator", "narrator-model", "--rounds", "1",
               "--replay", str(store), "--out", str(again)])
    assert rc == 0
    assert tree_digest(first) == tree_digest(again)


def test_replay_from_an_empty_store_fails_the_run(tmp_path, scene_dir, capsys):
    empty = tmp_path / "empty-store"
    empty.mkdir()
    rc = main(["run", "--scene", str(scene_dir / "cli-en-001.json"),
               "--cast", "student-model", "--narrator", "narrator-model",
               "--rounds", "1", "--replay", str(empty),
               "--out", str(tmp_path / "runs")])
    assert rc == 1
    assert "failed" in capsys.readouterr().out


def test_cli_argument_validation(tmp_path, scene_dir):
    with pytest.raises(SystemExit, match="requires --records"):
        main(["export-sft", "--method", "guided", "--runs", str(tmp_path),
              "--out", str(tmp_path / "x.jsonl")])
    with pytest.raises(SystemExit, match="requires --model"):
        main(["export-sft", "--method", "reflective", "--runs", str(tmp_path),
              "--out", str(tmp_path / "x.jsonl")])
    with pytest.raises(SystemExit, match="requires --source"):
        main(["craft", "--extract", "1", "--out", str(tmp_path / "scenes")])
    with pytest.raises(ValueError, match="mutually exclusive"):
        main(["run", "--scene", str(scene_dir), "--cast", "m", "--narrator", "n",
              "--record", str(tmp_path / "a"), "--replay", str(tmp_path / "b"),
              "--out", str(tmp_path / "runs")])


def test_stats_rejects_an_empty_records_file(tmp_path):
    empty = tmp_path / "records.jsonl"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(SystemExit, match="no records"):
        main(["stats", "--records", str(empty)])
