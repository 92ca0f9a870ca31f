"""Three-stage scene crafting: screenwriter, director, judge.

The screenwriter turns a source excerpt into a draft (or invents one from
a premise), the director refines the draft into a complete sheet, and the
judge scores the result on numeric quality aspects. Only drafts that
clear the acceptance policy become scenes; rejected slots retry with a
fresh take, bounded by max_attempts, and under-delivery is reported
rather than raised.

Extracted scenes are never scored for creativity; by definition they are
derivative, so the aspect is skipped rather than awarded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import prompts
from .domain import (
    Environment,
    CharacterProfile,
    Scene,
    SceneQuality,
    scene_errors,
)
from .gateway import (
    ChatRequest,
    Gateway,
    JUDGE_TEMPERATURE,
    ParseRepairError,
    ROLE_JUDGE,
    ROLE_SCENE_FORGE,
    UsageLedger,
    complete_parsed,
)
from .parsing import (
    ParseError,
    parse_character_block,
    parse_labeled_sections,
    parse_scene_quality_lines,
    split_character_blocks,
)

logger = logging.getLogger(__name__)

CAST_MIN = 2
CAST_MAX = 4

DRAFT_REMINDER = ("reply with the labeled lines Title:, Time:, Location:, Description:, "
                  "then Characters: followed by Name:/Role:/Profile:/Position:/State: "
                  "blocks, one per character")
QUALITY_REMINDER = "reply with one '<Aspect>: <score>' line per aspect, scores 1-5"


class CraftError(RuntimeError):
    """A drafting stage could not produce usable output."""


@dataclass(frozen=True)
class SceneDraft:
    title: str
    language: str
    origin: str                     # "extracted" | "generated"
    environment: Environment
    characters: tuple[CharacterProfile, ...]
    stage: str                      # "screenwriter" | "director"
    source_excerpt: str = ""


@dataclass(frozen=True)
class AcceptancePolicy:
    """Accept when the aspect mean clears min_mean and no aspect sags below min_score."""

    min_mean: float = 3.5
    min_score: float = 3.0

    def accepts(self, quality: SceneQuality) -> bool:
        values = list(quality.aspects().values())
        return (sum(values) / len(values)) >= self.min_mean and min(values) >= self.min_score


@dataclass(frozen=True)
class CraftConfig:
    source_context: str
    language: str = "en"
    extract_count: int = 0
    generate_count: int = 0
    policy: AcceptancePolicy = field(default_factory=AcceptancePolicy)
    max_attempts: int = 3
    id_prefix: str = "crafted"


def render_draft_block(draft: SceneDraft) -> str:
    """The labeled-text rendering of a draft, as prompts expect scenes."""
    lines = [
        f"Title: {draft.title}",
        f"Time: {draft.environment.time}",
        f"Location: {draft.environment.location}",
        f"Description: {draft.environment.description}",
        "Characters:",
    ]
    for c in draft.characters:
        lines += [f"Name: {c.name}", f"Role: {c.role}", f"Profile: {c.profile}",
                  f"Position: {c.position}", f"State: {c.state}"]
    return "\n".join(lines)


def parse_draft_reply(text: str, *, language: str, origin: str, stage: str,
                      source_excerpt: str = "") -> SceneDraft:
    """Parse a screenwriter or director reply into a draft.

    Any structural gap (missing label, empty field, duplicate or missing
    characters) is a ParseError so the repair loop gets a chance to fix it.
    """
    sections = parse_labeled_sections(
        text, ("Title", "Time", "Location", "Description", "Characters"))
    for label in ("Title", "Time", "Location", "Description", "Characters"):
        if not sections[label].strip():
            raise ParseError(f"section {label!r} is empty")
    characters = []
    for block in split_character_blocks(sections["Characters"]):
        fields = parse_character_block(block)
        if any(not v.strip() for v in fields.values()):
            raise ParseError("character block has an empty field")
        characters.append(CharacterProfile(
            name=fields["Name"], role=fields["Role"], profile=fields["Profile"],
            position=fields["Position"], state=fields["State"],
        ))
    if not characters:
        raise ParseError("no character blocks found")
    names = [c.name for c in characters]
    if len(set(names)) != len(names):
        raise ParseError(f"duplicate character names: {names}")
    return SceneDraft(
        title=sections["Title"], language=language, origin=origin,
        environment=Environment(time=sections["Time"], location=sections["Location"],
                                description=sections["Description"]),
        characters=tuple(characters), stage=stage, source_excerpt=source_excerpt,
    )


def draft_to_scene(draft: SceneDraft, scene_id: str) -> Scene:
    scene = Scene(
        id=scene_id, title=draft.title, language=draft.language, origin=draft.origin,
        environment=draft.environment, characters=draft.characters,
    )
    errors = scene_errors(scene)
    if errors:
        raise CraftError(f"draft produced an invalid scene: "
                         + "; ".join(v.message for v in errors))
    return scene


class SceneForge:
    """The three crafting stages bound to models and a ledger."""

    def __init__(self, gateway: Gateway, *, writer_model: str, judge_model: str,
                 language: str, ledger: UsageLedger,
                 temperature: float = 0.7, max_tokens: int = 2048):
        self.gateway = gateway
        self.writer_model = writer_model
        self.judge_model = judge_model
        self.language = language
        self.ledger = ledger
        self.temperature = temperature
        self.max_tokens = max_tokens

    def _writer_request(self, prompt: str) -> ChatRequest:
        return ChatRequest(model_id=self.writer_model, messages=(("user", prompt),),
                           temperature=self.temperature, max_tokens=self.max_tokens)

    def screenwrite(self, source_context: str, mode: str, count: int,
                    *, take_offset: int = 0) -> list[SceneDraft]:
        """Draft `count` scenes from one source, one model call per draft.

        A take marker keeps otherwise-identical prompts distinct so each
        draft is its own recorded exchange rather than a cache hit.
        """
        if mode not in ("extract", "generate"):
            raise ValueError(f"mode must be extract or generate, got {mode!r}")
        if not source_context.strip():
            raise ValueError("source context must be non-empty")
        template = "screenwrite_extract" if mode == "extract" else "screenwrite_generate"
        field_name = "excerpt" if mode == "extract" else "premise"
        origin = "extracted" if mode == "extract" else "generated"
        drafts = []
        for i in range(count):
            prompt = prompts.render(template, self.language,
                                    **{field_name: source_context},
                                    min_chars=str(CAST_MIN), max_chars=str(CAST_MAX))
            prompt += f"\n\nTake {take_offset + i + 1}."

            def parse(reply: str) -> SceneDraft:
                return parse_draft_reply(
                    reply, language=self.language, origin=origin, stage="screenwriter",
                    source_excerpt=source_context if mode == "extract" else "")

            try:
                draft = complete_parsed(self.gateway, self._writer_request(prompt), parse,
                                        role=ROLE_SCENE_FORGE, ledger=self.ledger,
                                        reminder=DRAFT_REMINDER)
            except ParseRepairError as e:
                raise CraftError(f"screenwriter output unusable: {e}") from e
            drafts.append(draft)
        return drafts

    def direct(self, draft: SceneDraft) -> SceneDraft:
        """Refine a screenwriter draft into a complete director draft."""
        if draft.stage != "screenwriter":
            raise ValueError(f"direct() needs a screenwriter draft, got stage {draft.stage!r}")
        prompt = prompts.render("direct", self.language, draft=render_draft_block(draft))

        def parse(reply: str) -> SceneDraft:
            return parse_draft_reply(reply, language=draft.language, origin=draft.origin,
                                     stage="director", source_excerpt=draft.source_excerpt)

        try:
            return complete_parsed(self.gateway, self._writer_request(prompt), parse,
                                   role=ROLE_SCENE_FORGE, ledger=self.ledger,
                                   reminder=DRAFT_REMINDER)
        except ParseRepairError as e:
            raise CraftError(f"director output unusable: {e}") from e

    def judge_scene(self, draft: SceneDraft) -> SceneQuality:
        """Score a director draft; creativity only for generated scenes."""
        if draft.stage != "director":
            raise ValueError(f"judge_scene() needs a director draft, got stage {draft.stage!r}")
        expect_creativity = draft.origin == "generated"
        aspects = ("Creativity", "Coherence", "Conformity", "Detail") if expect_creativity \
            else ("Coherence", "Conformity", "Detail")
        prompt = prompts.render(
            "judge_scene", self.language,
            scene=render_draft_block(draft),
            aspect_lines="\n".join(f"{a}: <score>" for a in aspects),
        )
        request = ChatRequest(model_id=self.judge_model, messages=(("user", prompt),),
                              temperature=JUDGE_TEMPERATURE, max_tokens=256)

        def parse(reply: str) -> SceneQuality:
            values = parse_scene_quality_lines(reply, expect_creativity=expect_creativity)
            return SceneQuality(
                coherence=values["coherence"], conformity=values["conformity"],
                detail=values["detail"],
                creativity=values["creativity"] if expect_creativity else None,
            )

        try:
            return complete_parsed(self.gateway, request, parse,
                                   role=ROLE_JUDGE, ledger=self.ledger,
                                   reminder=QUALITY_REMINDER)
        except ParseRepairError as e:
            raise CraftError(f"scene judge output unusable: {e}") from e


def craft(forge: SceneForge, config: CraftConfig) -> tuple[list[Scene], dict]:
    """Fill the requested extract/generate slots; returns (scenes, report).

    Each slot gets up to max_attempts full pipelines (draft, refine,
    judge). Rejections and crafting errors consume an attempt; an
    unfilled slot is reported, never raised.
    """
    scenes: list[Scene] = []
    entries: list[dict] = []
    for mode, count in (("extract", config.extract_count), ("generate", config.generate_count)):
        tag = "ext" if mode == "extract" else "gen"
        for slot in range(1, count + 1):
            filled = False
            for attempt in range(1, config.max_attempts + 1):
                take = (slot - 1) * config.max_attempts + attempt - 1
                entry = {"mode": mode, "slot": slot, "attempt": attempt,
                         "accepted": False, "scores": {}, "scene_id": "", "error": ""}
                try:
                    draft = forge.screenwrite(config.source_context, mode, 1,
                                              take_offset=take)[0]
                    directed = forge.direct(draft)
                    quality = forge.judge_scene(directed)
                except CraftError as e:
                    entry["error"] = str(e)
                    entries.append(entry)
                    continue
                entry["scores"] = {k: v for k, v in quality.aspects().items()}
                if config.policy.accepts(quality):
                    scene_id = f"{config.id_prefix}-{config.language}-{tag}-{slot:03d}"
                    scene = draft_to_scene(directed, scene_id)
                    scenes.append(scene)
                    entry["accepted"] = True
                    entry["scene_id"] = scene_id
                    entries.append(entry)
                    filled = True
                    break
                entries.append(entry)
            if not filled:
                logger.warning("slot %s-%d unfilled after %d attempts",
                               mode, slot, config.max_attempts)
    report = {
        "language": config.language,
        "requested": {"extract": config.extract_count, "generate": config.generate_count},
        "accepted": len(scenes),
        "policy": {"min_mean": config.policy.min_mean, "min_score": config.policy.min_score},
        "attempts": entries,
    }
    return scenes, report
