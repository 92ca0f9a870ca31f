"""Command-line entry points: craft, run, eval, stats, export-sft."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .domain import load_scene, load_scene_dir, store_scene
from .engine import DEFAULT_ROUNDS, run_batch
from .evaluation import (
    aggregate,
    evaluate_runs,
    load_records,
    parse_human_scores,
    reliability_report,
    render_reliability,
    render_report,
    render_validity,
    store_records,
    validity_report,
)
from .factory import (
    SOURCE_GUIDED,
    SOURCE_REFLECTIVE,
    SelectionPolicy,
    build_sft,
    export_dataset,
    reflective_examples,
    select_for_model,
    select_guided,
)
from .forge import AcceptancePolicy, CraftConfig, SceneForge, craft
from .gateway import GatewayConfig, UsageLedger, build_gateway

logger = logging.getLogger(__name__)


def _dump(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", metavar="CONFIG",
                        help="gateway config file (default: synthetic backend)")
    parser.add_argument("--record", metavar="DIR",
                        help="record every exchange into a replay script store")
    parser.add_argument("--replay", metavar="DIR",
                        help="serve every exchange from a replay script store")


def _gateway_from_args(args: argparse.Namespace):
    config = GatewayConfig.load(args.backend) if args.backend else GatewayConfig()
    gateway = build_gateway(config, record_dir=args.record, replay_dir=args.replay)
    return gateway, config


def _cmd_craft(args: argparse.Namespace) -> int:
    gateway, _ = _gateway_from_args(args)
    source_text = Path(args.source).read_text(encoding="utf-8") if args.source else ""
    ledger = UsageLedger()
    forge = SceneForge(gateway, writer_model=args.writer, judge_model=args.judge,
                       language=args.lang, ledger=ledger)
    config = CraftConfig(
        source_context=source_text, language=args.lang,
        extract_count=args.extract, generate_count=args.generate,
        policy=AcceptancePolicy(), max_attempts=args.attempts,
        id_prefix=args.prefix,
    )
    scenes, report = craft(forge, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        store_scene(scene, out / f"{scene.id}.json")
    _dump(report, out / "_craft_report.json")
    requested = sum(report["requested"].values())
    print(f"accepted {len(scenes)} of {requested} requested scenes -> {out}")
    return 0 if scenes else 1


def _load_cast(spec: str, roster: list[str]) -> dict[str, str]:
    """--cast is either a single model id for the whole roster or a JSON
    file mapping character name -> model id."""
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        mapping = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(mapping, dict):
            raise SystemExit(f"cast file {spec} must map character names to model ids")
        default = mapping.get("*", "")
        return {name: str(mapping.get(name, default)) for name in roster}
    return {name: spec for name in roster}


def _cmd_run(args: argparse.Namespace) -> int:
    gateway, config = _gateway_from_args(args)
    scene_path = Path(args.scene)
    scenes = load_scene_dir(scene_path) if scene_path.is_dir() else [load_scene(scene_path)]

    casts: dict[str, dict[str, str]] = {}
    for scene in scenes:
        cast = _load_cast(args.cast, list(scene.roster))
        missing = [name for name, model in cast.items() if not model]
        if missing:
            raise SystemExit(f"{scene.id}: no model for {', '.join(missing)}")
        casts[scene.id] = cast

    prices = config.prices if config.prices.rates else None
    manifest = run_batch(scenes, casts, args.narrator, gateway, rounds=args.rounds,
                         parallelism=args.parallel, out_root=args.out, prices=prices)
    failed = [r for r in manifest["runs"] if r["status"] != "completed"]
    for r in manifest["runs"]:
        print(f"{r['scene_id']}: {r['status']}" + (f" ({r['error']})" if r["error"] else ""))
    return 1 if failed else 0


def _cmd_eval(args: argparse.Namespace) -> int:
    gateway, _ = _gateway_from_args(args)
    ledger = UsageLedger()
    records, excluded = evaluate_runs(args.runs, args.judge, gateway, ledger)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store_records(records, out)
    report = aggregate(records, excluded_count=len(excluded))
    _dump({"aggregate": report.to_dict(), "excluded": excluded},
          out.with_suffix(".report.json"))
    print(render_report(report))
    for item in excluded:
        print(f"excluded: {item}", file=sys.stderr)
    print(f"{len(records)} records -> {out}")
    return 0 if records else 1


def _cmd_stats(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    if not records:
        raise SystemExit(f"no records in {args.records}")
    report = aggregate(records)
    print(render_report(report))
    reliability = reliability_report(records)
    print("Reliability (Cronbach's alpha by dimension):")
    print(render_reliability(reliability))
    doc: dict = {"aggregate": report.to_dict(), "reliability": reliability}
    if args.human:
        human = parse_human_scores(args.human)
        validity = validity_report(records, human)
        print("Judge-human agreement (Pearson):")
        print(render_validity(validity))
        doc["validity"] = validity
    if args.out:
        _dump(doc, Path(args.out))
    return 0


def _cmd_export_sft(args: argparse.Namespace) -> int:
    if args.method == SOURCE_GUIDED:
        records = load_records(args.records)
        policy = SelectionPolicy(min_mean=args.min_mean)
        selected = select_guided(records, args.runs, policy)
        examples = build_sft(selected, source=SOURCE_GUIDED)
    else:
        if not args.model:
            raise SystemExit("--method reflective requires --model")
        gateway, _ = _gateway_from_args(args)
        ledger = UsageLedger()
        selected = select_for_model(args.runs, args.model)
        examples = reflective_examples(gateway, selected, args.model, ledger)
    manifest = export_dataset(examples, args.out)
    _dump(manifest, Path(args.out).with_suffix(".manifest.json"))
    print(f"wrote {manifest['examples']} examples -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dramatis",
                                     description="role-play scenes: craft, run, judge, export")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("craft", help="draft and vet scenes from a source text or premise")
    p.add_argument("--source", help="source text file (required for --extract)")
    p.add_argument("--extract", type=int, default=0, metavar="N",
                   help="scenes to extract from the source text")
    p.add_argument("--generate", type=int, default=0, metavar="M",
                   help="scenes to invent from the source premise")
    p.add_argument("--lang", default="en", choices=("en", "zh"))
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--writer", default="synthetic-writer", help="screenwriter model id")
    p.add_argument("--judge", default="synthetic-judge", help="quality judge model id")
    p.add_argument("--attempts", type=int, default=3, help="draft attempts per slot")
    p.add_argument("--prefix", default="crafted", help="scene id prefix")
    _add_backend_args(p)
    p.set_defaults(func=_cmd_craft)

    p = sub.add_parser("run", help="play scenes and record trajectories")
    p.add_argument("--scene", required=True, help="scene file or directory")
    p.add_argument("--cast", required=True,
                   help="model id for all characters, or JSON file name->model")
    p.add_argument("--narrator", required=True, help="narrator model id")
    p.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)
    p.add_argument("--out", required=True, help="output run directory")
    p.add_argument("--parallel", type=int, default=1, metavar="K")
    _add_backend_args(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="judge recorded runs")
    p.add_argument("--runs", required=True, help="directory of run directories")
    p.add_argument("--judge", required=True, help="judge model id")
    p.add_argument("--out", required=True, help="records file (JSON lines)")
    _add_backend_args(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="aggregate records; reliability and validity")
    p.add_argument("--records", required=True, help="records file from eval")
    p.add_argument("--human", help="human-annotation table (trajectory_id, KA..BC)")
    p.add_argument("--out", help="write the combined report as JSON")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("export-sft", help="build a fine-tuning dataset from runs")
    p.add_argument("--runs", required=True, help="directory of run directories")
    p.add_argument("--records", help="records file (required for guided)")
    p.add_argument("--method", required=True, choices=(SOURCE_GUIDED, SOURCE_REFLECTIVE))
    p.add_argument("--model", help="model doing the self-rewrite (reflective)")
    p.add_argument("--min-mean", type=float, default=None,
                   help="guided: drop trajectories below this 7-metric mean")
    p.add_argument("--out", required=True, help="dataset file (JSON lines)")
    _add_backend_args(p)
    p.set_defaults(func=_cmd_export_sft)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "export-sft" and args.method == SOURCE_GUIDED and not args.records:
        raise SystemExit("--method guided requires --records")
    if args.command == "craft" and args.extract and not args.source:
        raise SystemExit("--extract requires --source")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
