"""Tolerant parsers for the labeled-text replies the pipeline asks models for.

Model output never arrives clean: labels show up bold, bulleted, numbered,
or lowercase, and values wrap across lines. Every parser here strips that
decoration, matches labels case-insensitively, and keeps the captured values
verbatim apart from trimming outer whitespace. A reply that still does not
fit raises ParseError, which the gateway's repair loop turns into a
reprompt.
"""

from __future__ import annotations

import re

from .domain import METRIC_LABELS, METRICS, MetricScores

class ParseError(ValueError):
    """Model output did not match the requested format."""


# Leading list/markdown decoration in front of a label: "1.", "-", "*", "#", "**".
_DECOR = re.compile(r"^\s*(?:[-*#>•]+\s*|\d+[.)]\s*)*")
_BOLD = re.compile(r"\*\*?|__")


def _clean_line_start(line: str) -> str:
    return _BOLD.sub("", _DECOR.sub("", line, count=1))


def strip_brackets(text: str) -> str:
    """Trim whitespace and one layer of surrounding [ ] or ( ) if present."""
    t = text.strip()
    for open_, close in (("[", "]"), ("(", ")")):
        if t.startswith(open_) and t.endswith(close):
            t = t[1:-1].strip()
    return t


def parse_labeled_sections(text: str, labels: tuple[str, ...],
                           *, required: tuple[str, ...] | None = None) -> dict[str, str]:
    """Split a reply into sections opened by "<Label>:" lines.

    A section runs until the next known label. Labels match
    case-insensitively after markdown decoration is removed; returned keys
    are the canonical labels given in `labels`. Raises ParseError when any
    required label (default: all of them) is absent.
    """
    canon = {label.lower(): label for label in labels}
    sections: dict[str, list[str]] = {}
    current: str | None = None
    label_re = re.compile(
        r"^(" + "|".join(re.escape(label) for label in labels) + r")\s*[::]\s*(.*)$",
        re.IGNORECASE,
    )
    for raw in text.splitlines():
        m = label_re.match(_clean_line_start(raw))
        if m:
            current = canon[m.group(1).lower()]
            sections.setdefault(current, [])
            if m.group(2).strip():
                sections[current].append(m.group(2))
        elif current is not None:
            sections[current].append(raw)

    out = {label: "\n".join(lines).strip() for label, lines in sections.items()}
    for label in (required if required is not None else labels):
        if label not in out:
            raise ParseError(f"missing section {label!r}")
    return out


def parse_influence_fields(text: str) -> tuple[str, str, str]:
    """Split an influence verdict into (actor, target, impact).

    The narrator replies in the three-field wire format
    `[Actor];;[Target Name];;[Impact]`. Exactly three ";;"-separated fields
    are accepted; surrounding brackets are stripped from each.
    """
    # Keep only the line carrying the separator; models sometimes preface it.
    candidates = [ln for ln in text.splitlines() if ";;" in ln]
    if len(candidates) != 1:
        raise ParseError(f"expected one ';;' line, found {len(candidates)}")
    fields = [strip_brackets(f) for f in candidates[0].split(";;")]
    if len(fields) != 3:
        raise ParseError(f"expected 3 ';;'-separated fields, got {len(fields)}")
    actor, target, impact = fields
    if not actor or not target or not impact:
        raise ParseError("influence fields must be non-empty")
    return actor, target, impact


def match_roster_name(candidate: str, roster: tuple[str, ...] | list[str]) -> str:
    """Resolve a model-written name against the scene roster.

    Tries exact match (after bracket/whitespace stripping), then
    case-insensitive, then unique-substring in either direction. Anything
    still ambiguous or unknown is a ParseError.
    """
    name = strip_brackets(candidate)
    if name in roster:
        return name
    lowered = name.lower()
    ci = [r for r in roster if r.lower() == lowered]
    if len(ci) == 1:
        return ci[0]
    subs = [r for r in roster if lowered and (lowered in r.lower() or r.lower() in lowered)]
    if len(subs) == 1:
        return subs[0]
    if len(subs) > 1:
        raise ParseError(f"name {candidate!r} is ambiguous among {subs}")
    raise ParseError(f"name {candidate!r} is not in the roster {list(roster)}")


_SCORE_VALUE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(?:/\s*5)?\s*$")


def parse_score_value(text: str, *, lo: float = 1.0, hi: float = 5.0,
                      step: float = 0.5) -> float:
    """Parse one rubric score: a number in [lo, hi] on a `step` grid.

    Accepts "4", "3.5", "4/5". Out-of-range or off-grid values are parse
    errors so a bad judge reply is repaired, never silently clamped.
    """
    m = _SCORE_VALUE.match(strip_brackets(text))
    if not m:
        raise ParseError(f"not a score value: {text!r}")
    value = float(m.group(1))
    if not lo <= value <= hi:
        raise ParseError(f"score {value} outside [{lo}, {hi}]")
    if step and abs(value / step - round(value / step)) > 1e-9:
        raise ParseError(f"score {value} not on a {step} grid")
    return value


def parse_metric_scores(text: str, *, critique: str = "") -> MetricScores:
    """Parse the seven labeled metric lines, e.g. "KA: 4" or
    "Knowledge Accuracy: 3.5". Integers and halves in [1, 5] are accepted."""
    values: dict[str, float] = {}
    for metric in METRICS:
        pattern = re.compile(
            r"(?:\b" + re.escape(METRIC_LABELS[metric]) + r"(?:\s*\(" + metric + r"\))?"
            + r"|\b" + metric + r")\s*[::]\s*([0-9.]+\s*(?:/\s*5)?)",
            re.IGNORECASE,
        )
        m = pattern.search(text)
        if not m:
            raise ParseError(f"missing metric {metric.upper()}")
        values[metric] = parse_score_value(m.group(1))
    return MetricScores(critique=critique, **values)


def parse_scene_quality_lines(text: str, *, expect_creativity: bool) -> dict[str, float]:
    """Parse "Coherence: 4"-style aspect lines from a scene judge reply.

    Creativity is only read when expected (generated scenes); extracted
    scenes are never given a creativity score.
    """
    aspects = ("creativity", "coherence", "conformity", "detail") if expect_creativity \
        else ("coherence", "conformity", "detail")
    out: dict[str, float] = {}
    for aspect in aspects:
        m = re.search(re.escape(aspect) + r"\s*[::]\s*([0-9.]+\s*(?:/\s*5)?)", text, re.IGNORECASE)
        if not m:
            raise ParseError(f"missing aspect {aspect}")
        out[aspect] = parse_score_value(m.group(1))
    return out


def parse_character_block(text: str) -> dict[str, str]:
    """Parse one character description block (Name/Role/Profile/Position/State)."""
    return parse_labeled_sections(text, ("Name", "Role", "Profile", "Position", "State"))


def split_character_blocks(text: str) -> list[str]:
    """Split a Characters section into per-character blocks on "Name:" lines."""
    blocks: list[list[str]] = []
    name_re = re.compile(r"^name\s*[::]", re.IGNORECASE)
    for raw in text.splitlines():
        if name_re.match(_clean_line_start(raw)):
            blocks.append([raw])
        elif blocks:
            blocks[-1].append(raw)
    return ["\n".join(b) for b in blocks]
