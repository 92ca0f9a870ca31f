"""An LLM-backed character: retrieval memory, BDI beliefs, actions.

A character plans one action per turn, reacts when the narrator says a
move landed on them, and restates both belief structures at the end of
every round. Everything the character ever does or witnesses is appended
to its memory; planning recalls the most relevant entries to build the
observation the action answers.

Action and reaction prompts are pure functions of (profile, scene-start
environment, observation), with beliefs deliberately left out: the
trajectory record keeps exactly those three things, so the same prompt
can be reassembled later for fine-tuning data. Beliefs still evolve every
round and land in the event log; they are run state, not prompt state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import prompts
from .domain import (
    Action,
    CharacterProfile,
    EnvBelief,
    Environment,
    Scene,
    SelfBelief,
    new_profile,
)
from .gateway import (
    ChatRequest,
    Gateway,
    ROLE_CHARACTER,
    UsageLedger,
    complete_parsed,
)
from .parsing import parse_labeled_sections

logger = logging.getLogger(__name__)

RECALL_K = 5

SELF_BELIEF_REMINDER = "reply with exactly three lines labeled Belief:, Desire:, Intention:"
ENV_BELIEF_REMINDER = ("reply with exactly three lines labeled Perception of Others:, "
                       "Understanding of the Scene:, Influence on Actions:")


class MemoryWriteError(RuntimeError):
    """Embedding a new memory entry failed; the step cannot proceed."""


@dataclass(frozen=True)
class MemoryEntry:
    text: str
    embedding: tuple[float, ...]
    round: int
    seq: int


@dataclass
class CharacterState:
    """Mutable per-run state for one character; confined to its scene run."""

    profile: CharacterProfile
    self_belief: SelfBelief
    env_belief: EnvBelief
    memory: list[MemoryEntry] = field(default_factory=list)


def seed_state(profile: CharacterProfile) -> CharacterState:
    # Round-1 beliefs start from the profile so the first prompt of the
    # run never describes a blank inner life.
    return CharacterState(
        profile=profile,
        self_belief=SelfBelief(belief=profile.profile, desire="", intention=""),
        env_belief=EnvBelief("", "", ""),
    )


def remember(state: CharacterState, text: str, round: int, seq: int, embed) -> None:
    """Append one memory entry; (round, seq) must advance strictly."""
    if not text.strip():
        raise ValueError("cannot remember empty text")
    if state.memory:
        last = state.memory[-1]
        if (round, seq) <= (last.round, last.seq):
            raise ValueError(
                f"memory order violation: ({round}, {seq}) after ({last.round}, {last.seq})"
            )
    try:
        vector = tuple(float(x) for x in embed(text))
    except Exception as e:
        raise MemoryWriteError(f"embedding failed for memory text: {e}") from e
    state.memory.append(MemoryEntry(text=text, embedding=vector, round=round, seq=seq))


def recall(state: CharacterState, query: str, k: int, embed) -> list[MemoryEntry]:
    """Top-k memories by cosine similarity to the query.

    Embeddings are unit vectors, so the dot product is the cosine. Exact
    score ties (identical texts) go to the more recent entry; results come
    back ordered by descending score, then recency.
    """
    if k <= 0 or not state.memory:
        return []
    query_vec = tuple(float(x) for x in embed(query))
    scored: list[tuple[float, int, int, MemoryEntry]] = []
    for entry in state.memory:
        score = 0.0
        for a, b in zip(entry.embedding, query_vec):
            score += a * b
        scored.append((score, entry.round, entry.seq, entry))
    scored.sort(key=lambda item: (-item[0], -item[1], -item[2]))
    return [entry for _score, _round, _seq, entry in scored[:k]]


# ---------------------------------------------------------------------------
# Prompt assembly (shared with the fine-tuning exporter)
# ---------------------------------------------------------------------------

def system_preamble(profile: CharacterProfile, scene_env: Environment, language: str) -> str:
    """The character's system message; uses the scene-start environment."""
    return prompts.render(
        "system_character", language,
        name=profile.name, role=profile.role, profile=profile.profile,
        time=scene_env.time, location=scene_env.location,
        description=scene_env.description,
    )


def memory_digest(entries: list[MemoryEntry]) -> str:
    if not entries:
        return "Recent memories: (none yet)"
    return "Recent memories:\n" + "\n".join(f"- {e.text}" for e in entries)


def plan_observation(env: Environment, recalled: list[MemoryEntry]) -> str:
    """What a planning character sees: current situation plus recall digest."""
    return f"{env.description}\n\n{memory_digest(recalled)}"


def action_messages(profile: CharacterProfile, scene_env: Environment,
                    observation: str, language: str) -> tuple[tuple[str, str], ...]:
    return (
        ("system", system_preamble(profile, scene_env, language)),
        ("user", prompts.render("act", language, name=profile.name, observation=observation)),
    )


def reaction_messages(profile: CharacterProfile, scene_env: Environment,
                      impact: str, language: str) -> tuple[tuple[str, str], ...]:
    return (
        ("system", system_preamble(profile, scene_env, language)),
        ("user", prompts.render("react", language, name=profile.name, impact=impact)),
    )


def classify_utterance(text: str) -> str:
    """kind=speak when the move is mostly quoted dialogue, else act."""
    stripped = text.strip()
    if not stripped:
        return "act"
    quoted = 0
    inside = False
    openers = {'"': '"', "“": "”", "「": "」"}
    closer = ""
    for ch in stripped:
        if not inside and ch in openers:
            inside = True
            closer = openers[ch]
        elif inside and ch == closer:
            inside = False
        elif inside:
            quoted += 1
    return "speak" if quoted * 2 > len(stripped) else "act"


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

class CharacterAgent:
    """One character bound to a gateway, model, and live state."""

    def __init__(self, scene: Scene, profile: CharacterProfile, gateway: Gateway,
                 model_id: str, ledger: UsageLedger, *, recall_k: int = RECALL_K,
                 temperature: float = 0.7, max_tokens: int = 1024):
        self.scene = scene
        self.gateway = gateway
        self.model_id = model_id
        self.ledger = ledger
        self.recall_k = recall_k
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.state = seed_state(profile)
        self._seq = 0

    @property
    def name(self) -> str:
        return self.state.profile.name

    @property
    def language(self) -> str:
        return self.scene.language

    def _embed(self, text: str):
        return self.gateway.embed(text)

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _complete(self, messages: tuple[tuple[str, str], ...]) -> str:
        request = ChatRequest(model_id=self.model_id, messages=messages,
                              temperature=self.temperature, max_tokens=self.max_tokens)
        response = self.gateway.complete(request, role=ROLE_CHARACTER, ledger=self.ledger)
        return response.content.strip()

    def remember(self, text: str, round: int) -> None:
        remember(self.state, text, round, self._next_seq(), self._embed)

    def observe(self, env: Environment) -> str:
        """Assemble the planning observation for the current environment."""
        query = env.description
        if self.state.memory:
            query = f"{env.description}\n{self.state.memory[-1].text}"
        recalled = recall(self.state, query, self.recall_k, self._embed)
        return plan_observation(env, recalled)

    def plan_action(self, env: Environment, round: int) -> tuple[Action, str]:
        """Plan the next move; returns the action and the observation it answered."""
        observation = self.observe(env)
        messages = action_messages(self.state.profile, self.scene.environment,
                                   observation, self.language)
        text = self._complete(messages)
        action = Action(actor=self.name, kind=classify_utterance(text), text=text, round=round)
        self.remember(action.text, round)
        return action, observation

    def react(self, impact: str, target: str, round: int) -> Action:
        """Respond to an influence whose target is this character."""
        if target != self.name:
            raise ValueError(f"influence targets {target!r}, not {self.name!r}")
        messages = reaction_messages(self.state.profile, self.scene.environment,
                                     impact, self.language)
        text = self._complete(messages)
        action = Action(actor=self.name, kind="react", text=text, round=round)
        self.remember(action.text, round)
        return action

    def update_self_belief(self, events: str, round: int) -> SelfBelief:
        messages = (
            ("system", system_preamble(self.state.profile, self.scene.environment, self.language)),
            ("user", prompts.render("self_belief", self.language, name=self.name, events=events)),
        )

        def parse(reply: str) -> SelfBelief:
            sections = parse_labeled_sections(reply, ("Belief", "Desire", "Intention"))
            return SelfBelief(belief=sections["Belief"], desire=sections["Desire"],
                              intention=sections["Intention"])

        request = ChatRequest(model_id=self.model_id, messages=messages,
                              temperature=self.temperature, max_tokens=self.max_tokens)
        belief = complete_parsed(self.gateway, request, parse, role=ROLE_CHARACTER,
                                 ledger=self.ledger, reminder=SELF_BELIEF_REMINDER)
        self.state.self_belief = belief
        return belief

    def update_env_belief(self, events: str, round: int) -> EnvBelief:
        messages = (
            ("system", system_preamble(self.state.profile, self.scene.environment, self.language)),
            ("user", prompts.render("env_belief", self.language, name=self.name, events=events)),
        )

        def parse(reply: str) -> EnvBelief:
            sections = parse_labeled_sections(
                reply, ("Perception of Others", "Understanding of the Scene", "Influence on Actions"))
            return EnvBelief(
                perception_of_others=sections["Perception of Others"],
                understanding_of_scene=sections["Understanding of the Scene"],
                influence_on_actions=sections["Influence on Actions"],
            )

        request = ChatRequest(model_id=self.model_id, messages=messages,
                              temperature=self.temperature, max_tokens=self.max_tokens)
        belief = complete_parsed(self.gateway, request, parse, role=ROLE_CHARACTER,
                                 ledger=self.ledger, reminder=ENV_BELIEF_REMINDER)
        self.state.env_belief = belief
        return belief

    def set_position_state(self, position: str, state: str) -> None:
        """Apply a narrator character-sheet update."""
        self.state.profile = new_profile(self.state.profile, position=position, state=state)
