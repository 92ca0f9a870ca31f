"""Round-based story orchestration.

One run executes a fixed number of rounds over a scene. Within a round,
each character in roster order plans an action; the narrator judges who
it lands on; if it lands on someone else that character reacts and the
narrator adjudicates the outcome and refreshes both character sheets,
otherwise only the actor's sheet is refreshed. After all turns the
narrator updates the environment, then every character restates both
belief structures. Every step of this becomes one event in an ordered
log, and each character's trajectory is a pure projection of that log.

Runs are written to disk without timestamps or host details, so a replay
of the same (scene, script) pair is byte-identical, regardless of how
many runs execute in parallel around it.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .characters import CharacterAgent, MemoryWriteError
from .domain import (
    Action,
    Influence,
    Scene,
    Trajectory,
    TrajectoryStep,
    scene_errors,
    store_scene,
    store_trajectory,
)
from .gateway import (
    Gateway,
    GatewayError,
    ParseRepairError,
    PriceTable,
    UsageLedger,
    scene_cost_report,
)
from .narrator import Narrator

logger = logging.getLogger(__name__)

DEFAULT_ROUNDS = 3

EVENT_KINDS = ("action", "influence", "reaction", "result",
               "state-update", "env-update", "belief-update")


class StoryError(RuntimeError):
    """A run could not start (bad scene or cast)."""


@dataclass
class SceneRun:
    scene: Scene
    cast: dict[str, str]
    narrator_model: str
    rounds: int
    events: list[dict] = field(default_factory=list)
    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    ledger: UsageLedger = field(default_factory=UsageLedger)
    status: str = "completed"   # {"completed", "failed"}
    error: str = ""


def _round_digest(events: list[dict], round: int) -> str:
    """What happened this round, as bullet lines for belief prompts."""
    lines = []
    for ev in events:
        if ev["round"] != round:
            continue
        if ev["kind"] in ("action", "reaction"):
            lines.append(f"- {ev['actor']}: {ev['text']}")
        elif ev["kind"] == "result":
            lines.append(f"- ({ev['actor']} / {ev['target']}) {ev['text']}")
    return "\n".join(lines) if lines else "- (nothing notable happened)"


def run_scene(scene: Scene, cast: dict[str, str], narrator_model: str, gateway: Gateway,
              *, rounds: int = DEFAULT_ROUNDS) -> SceneRun:
    """Execute the full story loop; never raises past setup.

    Failures mid-run mark the SceneRun failed and keep the partial event
    log, so a batch over many scenes degrades per scene, not wholesale.
    """
    errors = scene_errors(scene)
    if errors:
        raise StoryError(f"scene {scene.id!r} is invalid: " + "; ".join(v.message for v in errors))
    missing = [n for n in scene.roster if n not in cast]
    if missing:
        raise StoryError(f"cast is missing models for: {', '.join(missing)}")
    if rounds < 1:
        raise StoryError("rounds must be >= 1")

    run = SceneRun(scene=scene, cast={n: cast[n] for n in scene.roster},
                   narrator_model=narrator_model, rounds=rounds)
    agents = {
        name: CharacterAgent(scene, scene.character(name), gateway, cast[name], run.ledger)
        for name in scene.roster
    }
    narrator = Narrator(scene, gateway, narrator_model, run.ledger)
    env = scene.environment

    try:
        for round in range(1, rounds + 1):
            round_observations: list[str] = []
            for name in scene.roster:
                agent = agents[name]
                action, observation = agent.plan_action(env, round)
                run.events.append({
                    "kind": "action", "round": round, "actor": name,
                    "action_kind": action.kind, "text": action.text,
                    "observation": observation,
                })

                degraded = False
                try:
                    influence = narrator.analyze_influence(env, action)
                except ParseRepairError as e:
                    # A narrator that cannot name a target must not sink the
                    # run; treat the action as affecting nobody else.
                    logger.warning("influence analysis failed for %s, degrading: %s", name, e)
                    influence = Influence(actor=name, target=name, impact="")
                    degraded = True
                run.events.append({
                    "kind": "influence", "round": round, "actor": influence.actor,
                    "target": influence.target, "impact": influence.impact,
                    "degraded": degraded,
                })

                if influence.has_responder:
                    responder = agents[influence.target]
                    reaction = responder.react(influence.impact, influence.target, round)
                    run.events.append({
                        "kind": "reaction", "round": round, "actor": responder.name,
                        "text": reaction.text, "observation": influence.impact,
                    })
                    result = narrator.adjudicate(env, action, reaction)
                    run.events.append({
                        "kind": "result", "round": round, "actor": name,
                        "target": responder.name, "text": result.text,
                    })
                    agent.remember(result.text, round)
                    responder.remember(result.text, round)
                    for participant in (agent, responder):
                        position, state = narrator.update_character(
                            participant.state.profile, result.text)
                        participant.set_position_state(position, state)
                        run.events.append({
                            "kind": "state-update", "round": round,
                            "actor": participant.name, "position": position, "state": state,
                        })
                    round_observations.append(result.text)
                else:
                    position, state = narrator.update_character(
                        agent.state.profile, action.text)
                    agent.set_position_state(position, state)
                    run.events.append({
                        "kind": "state-update", "round": round,
                        "actor": name, "position": position, "state": state,
                    })
                    round_observations.append(action.text)

            update = narrator.update_environment(env, round_observations)
            env = update.env
            run.events.append({
                "kind": "env-update", "round": round,
                "time": env.time, "location": env.location, "description": env.description,
                "skipped": update.skipped, "failed": update.failed,
            })

            digest = _round_digest(run.events, round)
            for name in scene.roster:
                self_belief = agents[name].update_self_belief(digest, round)
                run.events.append({
                    "kind": "belief-update", "round": round, "actor": name,
                    "belief_kind": "self", "belief": self_belief.belief,
                    "desire": self_belief.desire, "intention": self_belief.intention,
                })
                env_belief = agents[name].update_env_belief(digest, round)
                run.events.append({
                    "kind": "belief-update", "round": round, "actor": name,
                    "belief_kind": "env",
                    "perception_of_others": env_belief.perception_of_others,
                    "understanding_of_scene": env_belief.understanding_of_scene,
                    "influence_on_actions": env_belief.influence_on_actions,
                })
    except (GatewayError, MemoryWriteError, ValueError) as e:
        run.status = "failed"
        run.error = f"{type(e).__name__}: {e}"
        logger.error("run of scene %s failed: %s", scene.id, run.error)

    for name in scene.roster:
        run.trajectories[name] = extract_trajectory(run, name)
    return run


def extract_trajectory(run: SceneRun, name: str) -> Trajectory:
    """A character's (observation, action) sequence, projected from events."""
    if name not in run.scene.roster:
        raise KeyError(name)
    steps: list[TrajectoryStep] = []
    for ev in run.events:
        if ev["kind"] == "action" and ev["actor"] == name:
            steps.append(TrajectoryStep(
                observation=ev["observation"],
                action=Action(actor=name, kind=ev["action_kind"],
                              text=ev["text"], round=ev["round"]),
            ))
        elif ev["kind"] == "reaction" and ev["actor"] == name:
            steps.append(TrajectoryStep(
                observation=ev["observation"],
                action=Action(actor=name, kind="react",
                              text=ev["text"], round=ev["round"]),
            ))
    return Trajectory(
        scene_id=run.scene.id,
        character=run.scene.character(name),
        environment=run.scene.environment,
        steps=tuple(steps),
    )


# ---------------------------------------------------------------------------
# Mechanical structure checking
# ---------------------------------------------------------------------------

def check_event_structure(events: list[dict], roster: tuple[str, ...],
                          rounds: int) -> list[str]:
    """Verify the event log against the round grammar; [] when clean.

    Per round, in roster order per character: action, influence, then
    either (reaction, result, two state-updates) when the influence names
    a responder or (one state-update) when it does not; after all turns
    one env-update, then self and env belief updates per character.
    """
    problems: list[str] = []
    index = 0

    def take(expect_kind: str, where: str) -> dict | None:
        nonlocal index
        if index >= len(events):
            problems.append(f"{where}: log ended, expected {expect_kind}")
            return None
        ev = events[index]
        index += 1
        if ev["kind"] != expect_kind:
            problems.append(f"{where}: expected {expect_kind}, found {ev['kind']}")
            return None
        return ev

    for round in range(1, rounds + 1):
        for name in roster:
            where = f"round {round}, turn of {name}"
            action = take("action", where)
            if action and action["actor"] != name:
                problems.append(f"{where}: action by {action['actor']!r}")
            influence = take("influence", where)
            if influence is None:
                return problems
            if influence["actor"] != name:
                problems.append(f"{where}: influence actor {influence['actor']!r}")
            if influence["target"] == influence["actor"]:
                update = take("state-update", where)
                if update and update["actor"] != name:
                    problems.append(f"{where}: no-responder update for {update['actor']!r}")
            else:
                reaction = take("reaction", where)
                if reaction and reaction["actor"] != influence["target"]:
                    problems.append(f"{where}: reaction by {reaction['actor']!r}, "
                                    f"expected {influence['target']!r}")
                take("result", where)
                for expected in (name, influence["target"]):
                    update = take("state-update", where)
                    if update and update["actor"] != expected:
                        problems.append(f"{where}: state-update for {update['actor']!r}, "
                                        f"expected {expected!r}")
        where = f"round {round} close"
        take("env-update", where)
        for name in roster:
            for belief_kind in ("self", "env"):
                ev = take("belief-update", where)
                if ev and (ev["actor"], ev["belief_kind"]) != (name, belief_kind):
                    problems.append(f"{where}: belief-update ({ev['actor']}, {ev['belief_kind']}), "
                                    f"expected ({name}, {belief_kind})")
    if index != len(events):
        problems.append(f"{len(events) - index} trailing events beyond round {rounds}")
    return problems


def calls_required(events: list[dict]) -> int:
    """Gateway calls implied by an event log (absent any repair reprompts)."""
    count = 0
    for ev in events:
        if ev["kind"] in ("action", "reaction", "result", "state-update", "belief-update"):
            count += 1
        elif ev["kind"] == "influence":
            if not ev.get("degraded"):
                count += 1
        elif ev["kind"] == "env-update":
            if not ev.get("skipped"):
                count += 1
    return count


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _safe_filename(name: str) -> str:
    return "".join("_" if c in r'/\:*?"<>| ' else c for c in name)


def _dump_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def persist_run(run: SceneRun, out_dir: str | Path, *, prices: PriceTable | None = None) -> Path:
    """Write the run directory: scene, events, trajectories, ledger, manifest.

    Nothing written here carries a timestamp or host detail; bytes depend
    only on the run content.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store_scene(run.scene, out / "scene.json")

    with (out / "events.jsonl").open("w", encoding="utf-8") as fh:
        for ev in run.events:
            fh.write(json.dumps(ev, ensure_ascii=False, sort_keys=True) + "\n")

    trajectory_files: dict[str, str] = {}
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for name, traj in run.trajectories.items():
        filename = f"{_safe_filename(name)}.jsonl"
        store_trajectory(traj, traj_dir / filename)
        trajectory_files[name] = f"trajectories/{filename}"

    ledger_doc = run.ledger.to_dict()
    if prices is not None:
        ledger_doc["cost_report"] = scene_cost_report(run.ledger, prices).to_dict()
    _dump_json(ledger_doc, out / "ledger.json")

    _dump_json({
        "scene_id": run.scene.id,
        "language": run.scene.language,
        "cast": dict(sorted(run.cast.items())),
        "narrator_model": run.narrator_model,
        "rounds": run.rounds,
        "status": run.status,
        "error": run.error,
        "event_count": len(run.events),
        "trajectory_files": dict(sorted(trajectory_files.items())),
    }, out / "manifest.json")
    return out


def run_batch(scenes: list[Scene], casts: dict[str, dict[str, str]], narrator_model: str,
              gateway: Gateway, *, rounds: int = DEFAULT_ROUNDS, parallelism: int = 1,
              out_root: str | Path, prices: PriceTable | None = None) -> dict:
    """Run many scenes, each into its own directory under out_root.

    Runs are independent: they share the gateway (stateless) and nothing
    else, so results do not depend on the parallelism degree. The batch
    manifest lists runs sorted by scene id.
    """
    if parallelism < 1:
        raise StoryError("parallelism must be >= 1")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    def one(scene: Scene) -> dict:
        try:
            run = run_scene(scene, casts[scene.id], narrator_model, gateway, rounds=rounds)
        except StoryError as e:
            return {"scene_id": scene.id, "status": "failed", "error": str(e), "dir": ""}
        persist_run(run, out_root / scene.id, prices=prices)
        return {"scene_id": scene.id, "status": run.status, "error": run.error,
                "dir": scene.id}

    if parallelism == 1:
        results = [one(scene) for scene in scenes]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, scenes))

    manifest = {
        "rounds": rounds,
        "narrator_model": narrator_model,
        "runs": sorted(results, key=lambda r: r["scene_id"]),
    }
    _dump_json(manifest, out_root / "manifest.json")
    return manifest
