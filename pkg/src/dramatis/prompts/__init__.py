"""Prompt templates, one text file per template per language.

Templates live under ``prompts/<language>/<name>.txt`` and use
``str.format`` placeholders. Instructions are written in the scene's
language; structural labels (Time:, Belief:, Actor:, ...) stay in English
in every language so a single parser and a single set of format anchors
serve the whole corpus.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..domain import Environment

TEMPLATE_NAMES = (
    "system_character",
    "act",
    "react",
    "self_belief",
    "env_belief",
    "influence",
    "result",
    "update_character",
    "update_scene",
    "screenwrite_extract",
    "screenwrite_generate",
    "direct",
    "judge_scene",
    "critique",
    "score",
    "reflect_critique",
    "reflect_rewrite",
)


@lru_cache(maxsize=None)
def load_template(name: str, language: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}")
    path = resources.files(__package__) / language / f"{name}.txt"
    try:
        return path.read_text(encoding="utf-8").strip("\n")
    except FileNotFoundError:
        raise KeyError(f"no {language!r} version of template {name!r}") from None


def render(template_name: str, language: str, **fields: str) -> str:
    template = load_template(template_name, language)
    try:
        return template.format(**fields)
    except KeyError as e:
        raise ValueError(f"template {template_name!r} needs field {e.args[0]!r}") from None
    except IndexError:
        raise ValueError(f"template {template_name!r} has a positional placeholder") from None


def env_block(env: Environment) -> str:
    """The labeled three-line environment rendering used inside prompts."""
    return f"Time: {env.time}\nLocation: {env.location}\nDescription: {env.description}"
