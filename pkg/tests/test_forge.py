from __future__ import annotations

import pytest

from dramatis.domain import Environment, CharacterProfile, SceneQuality, scene_errors
from dramatis.forge import (
    AcceptancePolicy,
    CraftConfig,
    CraftError,
    SceneDraft,
    SceneForge,
    craft,
    draft_to_scene,
    parse_draft_reply,
    render_draft_block,
)
from dramatis.gateway import Gateway, QueueBackend, UsageLedger
from dramatis.parsing import ParseError

# Accept iff mean(available aspects) >= 3.5 and every aspect >= 3.0.
POLICY_CASES = [
    (SceneQuality(coherence=4, conformity=4, detail=4), True),
    (SceneQuality(coherence=3, conformity=3, detail=3, creativity=3), False),  # mean 3.0
    (SceneQuality(coherence=5, conformity=5, detail=5, creativity=1), False),  # low aspect
    (SceneQuality(coherence=4, conformity=4, detail=3), True),                 # mean 3.67
    (SceneQuality(coherence=5, conformity=5, detail=2), False),                # mean 4, min 2
    (SceneQuality(coherence=3.5, conformity=3.5, detail=3.5), True),           # both at edge
    (SceneQuality(coherence=4, conformity=3, detail=3, creativity=3), False),  # mean 3.25
    (SceneQuality(coherence=5, conformity=5, detail=3, creativity=3), True),   # mean 4.0
]


@pytest.mark.parametrize("quality,expected", POLICY_CASES)
def test_acceptance_policy_truth_table(quality, expected):
    assert AcceptancePolicy().accepts(quality) is expected


def test_policy_mean_uses_only_available_aspects():
    # Without creativity the mean is over three aspects, not four with a
    # phantom zero.
    assert AcceptancePolicy().accepts(SceneQuality(coherence=3, conformity=4, detail=4))


DRAFT_REPLY = """Title: The Missing Page
Time: dusk
Location: the lamp gallery
Description: Wind rattles the panes while the logbook lies open.
Characters:
Name: Mara Voss
Role: lighthouse keeper
Profile: Tight-lipped, protective of the lamp and its records.
Position: beside the lamp
State: wary
Name: Ellis Grey
Role: maritime inspector
Profile: Methodical, reads silences as carefully as documents.
Position: at the gallery door
State: patient"""

ACCEPT_REPLY = "Coherence: 4\nConformity: 4\nDetail: 4"
REJECT_REPLY = "Coherence: 3\nConformity: 3\nDetail: 3"


def _forge(replies: list[str]) -> tuple[SceneForge, QueueBackend]:
    backend = QueueBackend(list(replies))
    forge = SceneForge(Gateway(backend), writer_model="writer", judge_model="judge",
                       language="en", ledger=UsageLedger())
    return forge, backend


def _director_draft(origin: str) -> SceneDraft:
    parsed = parse_draft_reply(DRAFT_REPLY, language="en", origin=origin,
                               stage="screenwriter")
    return SceneDraft(title=parsed.title, language="en", origin=origin,
                      environment=parsed.environment, characters=parsed.characters,
                      stage="director")


def test_parse_draft_reply_round_trips_through_render():
    draft = parse_draft_reply(DRAFT_REPLY, language="en", origin="extracted",
                              stage="screenwriter")
    assert draft.title == "The Missing Page"
    assert draft.environment.location == "the lamp gallery"
    assert [c.name for c in draft.characters] == ["Mara Voss", "Ellis Grey"]
    assert render_draft_block(draft) == DRAFT_REPLY
    # render and re-parse is the identity on the structured fields
    again = parse_draft_reply(render_draft_block(draft), language="en",
                              origin="extracted", stage="screenwriter")
    assert again.environment == draft.environment
    assert again.characters == draft.characters


@pytest.mark.parametrize("mutation,complaint", [
    (lambda t: t.replace("Title: The Missing Page\n", ""), "Title"),
    (lambda t: t.replace("the lamp gallery", ""), "empty"),
    (lambda t: t.replace("Name: Ellis Grey", "Name: Mara Voss"), "duplicate"),
    (lambda t: t.split("Characters:")[0] + "Characters:\nnobody here", "character"),
    (lambda t: t.replace("State: wary", "State:"), "empty field"),
])
def test_parse_draft_reply_rejects_structural_gaps(mutation, complaint):
    with pytest.raises(ParseError, match=complaint):
        parse_draft_reply(mutation(DRAFT_REPLY), language="en", origin="extracted",
                          stage="screenwriter")


def test_extracted_drafts_are_never_scored_for_creativity():
    forge, backend = _forge([ACCEPT_REPLY])
    quality = forge.judge_scene(_director_draft("extracted"))
    assert quality.creativity is None
    assert set(quality.aspects()) == {"coherence", "conformity", "detail"}
    prompt = backend.requests[0].messages[-1][1]
    assert "Creativity" not in prompt
    assert "Coherence" in prompt


def test_generated_drafts_are_scored_for_creativity():
    forge, backend = _forge(["Creativity: 5\n" + ACCEPT_REPLY])
    quality = forge.judge_scene(_director_draft("generated"))
    assert quality.creativity == 5
    assert "Creativity" in backend.requests[0].messages[-1][1]


def test_stage_preconditions_are_enforced():
    forge, _ = _forge([])
    director = _director_draft("extracted")
    with pytest.raises(ValueError, match="screenwriter draft"):
        forge.direct(director)
    screen = parse_draft_reply(DRAFT_REPLY, language="en", origin="extracted",
                               stage="screenwriter")
    with pytest.raises(ValueError, match="director draft"):
        forge.judge_scene(screen)


def test_screenwrite_validates_inputs():
    forge, _ = _forge([])
    with pytest.raises(ValueError, match="mode"):
        forge.screenwrite("context", "remix", 1)
    with pytest.raises(ValueError, match="non-empty"):
        forge.screenwrite("   ", "extract", 1)


def test_take_markers_keep_sibling_prompts_distinct():
    forge, backend = _forge([DRAFT_REPLY, DRAFT_REPLY])
    forge.screenwrite("A keeper guards a lighthouse logbook.", "extract", 2)
    first = backend.requests[0].messages[-1][1]
    second = backend.requests[1].messages[-1][1]
    assert first != second
    assert first.endswith("Take 1.")
    assert second.endswith("Take 2.")


def test_draft_to_scene_rejects_invalid_sheets():
    draft = _director_draft("extracted")
    hollow = SceneDraft(title="", language=draft.language, origin=draft.origin,
                        environment=draft.environment, characters=draft.characters,
                        stage="director")
    with pytest.raises(CraftError, match="invalid scene"):
        draft_to_scene(hollow, "x-en-ext-001")
    scene = draft_to_scene(draft, "x-en-ext-001")
    assert scene.id == "x-en-ext-001"
    assert scene_errors(scene) == []


def test_craft_retries_until_the_judge_accepts():
    forge, backend = _forge([
        DRAFT_REPLY, DRAFT_REPLY, REJECT_REPLY,       # attempt 1: mean 3.0, rejected
        DRAFT_REPLY, DRAFT_REPLY, ACCEPT_REPLY,       # attempt 2: accepted
    ])
    config = CraftConfig(source_context="A keeper guards the logbook.",
                         extract_count=1, id_prefix="craftedx")
    scenes, report = craft(forge, config)
    assert [s.id for s in scenes] == ["craftedx-en-ext-001"]
    assert backend.replies == []
    attempts = report["attempts"]
    assert [(e["attempt"], e["accepted"]) for e in attempts] == [(1, False), (2, True)]
    assert attempts[0]["scores"] == {"coherence": 3, "conformity": 3, "detail": 3}
    assert attempts[1]["scene_id"] == "craftedx-en-ext-001"
    assert report["accepted"] == 1


def test_craft_charges_attempts_for_unusable_drafts():
    garbage = ["not a draft"] * 4                     # initial try + 3 repairs
    forge, _ = _forge(garbage + [DRAFT_REPLY, DRAFT_REPLY, ACCEPT_REPLY])
    config = CraftConfig(source_context="ctx", extract_count=1)
    scenes, report = craft(forge, config)
    assert len(scenes) == 1
    first, second = report["attempts"]
    assert first["accepted"] is False
    assert "screenwriter output unusable" in first["error"]
    assert second["accepted"] is True


def test_craft_reports_unfilled_slots_instead_of_raising():
    forge, _ = _forge([DRAFT_REPLY, DRAFT_REPLY, REJECT_REPLY])
    config = CraftConfig(source_context="ctx", extract_count=1, max_attempts=1)
    scenes, report = craft(forge, config)
    assert scenes == []
    assert report["accepted"] == 0
    assert report["attempts"][0]["accepted"] is False
    assert report["requested"] == {"extract": 1, "generate": 0}


def test_craft_fills_extract_and_generate_slots(synthetic_gateway):
    forge = SceneForge(synthetic_gateway, writer_model="synthetic-writer",
                       judge_model="synthetic-judge", language="en",
                       ledger=UsageLedger())
    config = CraftConfig(
        source_context="Mara Voss keeps the light; Ellis Grey arrives to audit the "
                       "logbook after a wreck off the point.",
        extract_count=2, generate_count=1)
    scenes, report = craft(forge, config)
    assert [s.id for s in scenes] == [
        "crafted-en-ext-001", "crafted-en-ext-002", "crafted-en-gen-001"]
    assert [s.origin for s in scenes] == ["extracted", "extracted", "generated"]
    for scene in scenes:
        assert scene_errors(scene) == []
    assert report["accepted"] == 3
    # extracted slots carry no creativity score, generated slots do
    ext = [e for e in report["attempts"] if e["mode"] == "extract" and e["accepted"]]
    gen = [e for e in report["attempts"] if e["mode"] == "generate" and e["accepted"]]
    assert all("creativity" not in e["scores"] for e in ext)
    assert all("creativity" in e["scores"] for e in gen)
