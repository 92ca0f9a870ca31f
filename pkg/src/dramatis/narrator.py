"""The objective world model for a scene run.

The narrator decides where each action lands, adjudicates what happens
when a move meets a response, and keeps character sheets and the
environment up to date. It holds no state of its own between calls; the
scene run owns everything.

All four functions reprompt on malformed output (original prompt plus a
terse format reminder, three repairs at most). A failed environment
update is the one fail-open path: the round keeps its previous
environment rather than aborting the run, because a bad narrator reply
must not corrupt shared state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import prompts
from .domain import Action, CharacterProfile, Environment, Influence, InteractionResult, Scene
from .gateway import (
    ChatRequest,
    Gateway,
    ParseRepairError,
    ROLE_NARRATOR,
    UsageLedger,
    complete_parsed,
)
from .parsing import ParseError, match_roster_name, parse_influence_fields, parse_labeled_sections

logger = logging.getLogger(__name__)

INFLUENCE_REMINDER = ("reply with exactly one line of the form "
                      "[Actor];;[Target Name];;[Impact], naming a character from the roster")
RESULT_REMINDER = ("reply with one short paragraph of fresh narration; "
                   "do not quote the action or the reaction verbatim")
CHARACTER_REMINDER = "reply with exactly two lines labeled Position: and State:"
SCENE_REMINDER = "reply with exactly three lines labeled Time:, Location:, Description:"


@dataclass(frozen=True)
class EnvUpdate:
    env: Environment
    skipped: bool = False   # nothing observed, no call made
    failed: bool = False    # narrator reply never parsed; env kept as-is


class Narrator:
    """Stateless scene referee bound to a gateway, model, and ledger."""

    def __init__(self, scene: Scene, gateway: Gateway, model_id: str, ledger: UsageLedger,
                 *, temperature: float = 0.7, max_tokens: int = 1024):
        self.scene = scene
        self.gateway = gateway
        self.model_id = model_id
        self.ledger = ledger
        self.temperature = temperature
        self.max_tokens = max_tokens

    @property
    def language(self) -> str:
        return self.scene.language

    def _request(self, user_text: str) -> ChatRequest:
        return ChatRequest(
            model_id=self.model_id,
            messages=(("user", user_text),),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )

    def analyze_influence(self, env: Environment, action: Action) -> Influence:
        """Who does this action land on? target == actor means nobody else."""
        roster = self.scene.roster
        if action.actor not in roster:
            raise ValueError(f"actor {action.actor!r} is not in the roster")
        prompt = prompts.render(
            "influence", self.language,
            time=env.time, location=env.location, description=env.description,
            roster=", ".join(roster), actor=action.actor, action=action.text,
        )

        def parse(reply: str) -> Influence:
            actor_field, target_field, impact = parse_influence_fields(reply)
            if match_roster_name(actor_field, roster) != action.actor:
                raise ParseError(f"first field {actor_field!r} is not the actor")
            target = match_roster_name(target_field, roster)
            return Influence(actor=action.actor, target=target, impact=impact)

        return complete_parsed(self.gateway, self._request(prompt), parse,
                               role=ROLE_NARRATOR, ledger=self.ledger,
                               reminder=INFLUENCE_REMINDER)

    def adjudicate(self, env: Environment, action: Action, reaction: Action) -> InteractionResult:
        """Settle an action/reaction pair into one outcome narration."""
        prompt = prompts.render(
            "result", self.language,
            actor=action.actor, action=action.text,
            responder=reaction.actor, reaction=reaction.text,
        )

        def parse(reply: str) -> InteractionResult:
            text = reply.strip()
            for label, source in (("action", action.text), ("reaction", reaction.text)):
                if source.strip() and source.strip() in text:
                    raise ParseError(f"outcome repeats the {label} verbatim")
            return InteractionResult(text=text)

        return complete_parsed(self.gateway, self._request(prompt), parse,
                               role=ROLE_NARRATOR, ledger=self.ledger,
                               reminder=RESULT_REMINDER)

    def update_character(self, profile: CharacterProfile, observation: str) -> tuple[str, str]:
        """Refresh one character sheet; returns (position, state)."""
        if not observation.strip():
            raise ValueError("observation must be non-empty")
        prompt = prompts.render(
            "update_character", self.language,
            name=profile.name, position=profile.position, state=profile.state,
            events=observation,
        )

        def parse(reply: str) -> tuple[str, str]:
            sections = parse_labeled_sections(reply, ("Position", "State"))
            if not sections["Position"] or not sections["State"]:
                raise ParseError("Position and State must be non-empty")
            return sections["Position"], sections["State"]

        return complete_parsed(self.gateway, self._request(prompt), parse,
                               role=ROLE_NARRATOR, ledger=self.ledger,
                               reminder=CHARACTER_REMINDER)

    def update_environment(self, env: Environment, observations: list[str]) -> EnvUpdate:
        """End-of-round environment refresh; fail-open on bad replies."""
        if not observations:
            return EnvUpdate(env=env, skipped=True)
        prompt = prompts.render(
            "update_scene", self.language,
            time=env.time, location=env.location, description=env.description,
            events="\n".join(f"- {o}" for o in observations),
        )

        def parse(reply: str) -> Environment:
            sections = parse_labeled_sections(reply, ("Time", "Location", "Description"))
            if not all(sections.values()):
                raise ParseError("Time, Location and Description must be non-empty")
            return Environment(time=sections["Time"], location=sections["Location"],
                               description=sections["Description"])

        try:
            updated = complete_parsed(self.gateway, self._request(prompt), parse,
                                      role=ROLE_NARRATOR, ledger=self.ledger,
                                      reminder=SCENE_REMINDER)
        except ParseRepairError as e:
            logger.warning("environment update failed, keeping previous environment: %s", e)
            return EnvUpdate(env=env, failed=True)
        return EnvUpdate(env=updated)
