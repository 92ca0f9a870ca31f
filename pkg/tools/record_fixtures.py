"""Rebuild the committed test fixtures.

Writes the 10-scene corpus under tests/fixtures/scenes/ and records replay
script stores for the run, eval, and reflective flows against the synthetic
backend. Run from anywhere; paths are anchored to the repository root.

The stores are what the acceptance suite replays, so regenerate them (and
only them) whenever prompt templates or the call sequence change:

    python3 tools/record_fixtures.py
"""

from __future__ import annotations

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from dramatis.domain import CharacterProfile, Environment, Scene, scene_errors, store_scene
from dramatis.engine import run_batch
from dramatis.evaluation import evaluate_runs
from dramatis.factory import reflective_examples, select_for_model
from dramatis.gateway import GatewayConfig, UsageLedger, build_gateway

SCENES_DIR = ROOT / "tests" / "fixtures" / "scenes"
REPLAY_DIR = ROOT / "tests" / "fixtures" / "replay"

REPLAYED_SCENES = ("fix-en-001", "fix-en-002", "fix-zh-001", "fix-zh-002")
ROUNDS = 3
NARRATOR = "narrator-model"
JUDGE = "fixture-judge"
REFLECTIVE_MODEL = "model-alpha"


def _scene(scene_id, title, language, origin, time, location, description, people):
    return Scene(
        id=scene_id, title=title, language=language, origin=origin,
        environment=Environment(time=time, location=location, description=description),
        characters=tuple(CharacterProfile(*p) for p in people),
    )


SCENES = [
    _scene(
        "fix-en-001", "The Missing Page", "en", "extracted",
        "dusk", "the lamp gallery of Harlow Point lighthouse",
        "Wind rattles the panes. The October page of the logbook has been cut "
        "out, and the relief boat is due within the hour.",
        [
            ("Mara Voss", "lighthouse keeper",
             "Twenty years on the rock. Tight-lipped, protective of the lamp "
             "and of her late partner's reputation.",
             "beside the lamp, one hand on the brass rail", "outwardly calm, guarded"),
            ("Ellis Grey", "maritime inspector",
             "Sent from the mainland after the Marguerite ran aground. "
             "Methodical, reads silences as carefully as documents.",
             "at the gallery door, hat in hand", "politely persistent"),
        ],
    ),
    _scene(
        "fix-en-002", "Salvage Rights", "en", "extracted",
        "first light", "the town quay, low tide",
        "Crates from the wrecked Marguerite lie roped under tarpaulin. "
        "Three claims on them, one constable, and no paperwork.",
        [
            ("Tobin Hale", "boatman",
             "Pulled four sailors out of the surf and thinks that settles the "
             "question of the cargo. Loud, generous, quick to anger.",
             "standing on the largest crate", "triumphant, daring anyone to object"),
            ("Sera Quint", "storekeeper",
             "Holds unpaid invoices against the Marguerite's owner and means "
             "to collect in goods. Dry, exact, unhurried.",
             "at the foot of the crate with a ledger", "coolly determined"),
            ("Mara Voss", "lighthouse keeper",
             "Twenty years on the rock. Came down only to report the wreck, "
             "and wants no part of the squabble she can see coming.",
             "apart from the others, by the bollard", "weary, wanting to leave"),
        ],
    ),
    _scene(
        "fix-en-003", "The Late Ferry", "en", "extracted",
        "near midnight", "the fog-bound ferry pier",
        "The last ferry is two hours overdue. The telegraph line to the "
        "mainland went quiet at ten.",
        [
            ("Ellis Grey", "maritime inspector",
             "Stranded mid-investigation with his notes locked in the ferry "
             "office. Hates waiting, hides it badly.",
             "pacing the length of the pier gate", "impatient, cold"),
            ("Tobin Hale", "boatman",
             "Knows the channel blind and owns the only boat still in the "
             "water. Enjoys being needed.",
             "leaning against the pier office wall", "amused, weighing an offer"),
        ],
    ),
    _scene(
        "fix-en-004", "Inventory", "en", "generated",
        "mid-morning", "the back room of Quint's Provisions",
        "Annual audit day. A sealed crate nobody remembers ordering sits in "
        "the middle of the floor with freight marks from the Marguerite.",
        [
            ("Sera Quint", "storekeeper",
             "Keeps two sets of books and both of them honest, mostly. "
             "Counts before she speaks.",
             "behind the counting desk", "composed, faintly defensive"),
            ("Ellis Grey", "maritime inspector",
             "Followed the freight marks here. Treats every shrug as an "
             "exhibit. Patient to a fault.",
             "crouched beside the sealed crate", "quietly certain"),
        ],
    ),
    _scene(
        "fix-en-005", "Storm Glass", "en", "generated",
        "late afternoon, pressure falling", "the lighthouse supply room",
        "The barometer has dropped faster than anyone has seen. The relief "
        "boat must either leave now or stay the week.",
        [
            ("Mara Voss", "lighthouse keeper",
             "Twenty years on the rock. Reads weather better than the "
             "instruments do and trusts neither boats nor optimism.",
             "at the storm-glass shelf", "grim, decided"),
            ("Tobin Hale", "boatman",
             "Due to take the relief crew ashore tonight. Believes the "
             "channel will hold one more crossing.",
             "in the doorway with a coil of rope", "stubborn, confident"),
            ("Ellis Grey", "maritime inspector",
             "His inquiry ends tomorrow either way. A week on the rock ruins "
             "more than his schedule.",
             "between the two of them", "torn, calculating"),
        ],
    ),
    _scene(
        "fix-en-006", "The Relief Keeper", "en", "extracted",
        "grey noon", "the lighthouse kitchen",
        "The relief keeper has arrived three days early with a transfer "
        "order that looks wrong in two places.",
        [
            ("Mara Voss", "lighthouse keeper",
             "Twenty years on the rock. The lighthouse is the only home she "
             "has; the order would end that without a hearing.",
             "seated at the kitchen table, order in hand", "stunned, hardening"),
            ("Sera Quint", "storekeeper",
             "Came out with the month's provisions and a sharp eye for "
             "forged signatures; owes Mara an old favour.",
             "unpacking tins with deliberate slowness", "watchful, loyal"),
        ],
    ),
    _scene(
        "fix-zh-001", "误拆的信", "zh", "extracted",
        "黄昏", "青石镇驿站的前厅",
        "驿站刚收到两封同名的信，其中一封已被误拆。拆信的人还没来得及封回去，收信的人已经进了门。",
        [
            ("沈砚秋", "驿丞",
             "在驿站当差十二年，从不出错，今日偏偏拆错了信。性子谨慎，最怕落人口实。",
             "站在柜台后，手按着那封拆开的信", "强作镇定，心中发慌"),
            ("顾长风", "游学的举子",
             "千里赶考路过，等一封家信等了半月。脾气直，眼睛尖，进门就看见柜台上的信角。",
             "刚跨进门槛，目光落在柜台上", "又急又疑"),
        ],
    ),
    _scene(
        "fix-zh-002", "夜航船", "zh", "extracted",
        "子夜", "运河上的一条夜航船",
        "船行至半途起了大雾，艄公说前面的水声不对。舱里只有两位乘客，和一只不肯安静的箱子。",
        [
            ("白篱", "走江湖的医女",
             "背着药箱赶夜路去邻县出诊。胆大心细，听得出箱子里的动静不是老鼠。",
             "坐在舱口，手搭在自己的药箱上", "警觉，侧耳听着"),
            ("陆明澜", "押货的账房先生",
             "替东家押一只不许开的箱子。话多，怕事，越怕越说。",
             "挡在那只木箱前面", "紧张，强装无事"),
        ],
    ),
    _scene(
        "fix-zh-003", "当铺对账", "zh", "generated",
        "清晨", "济源当铺的账房",
        "昨夜盘账，柜上少了一对玉镯，账册上却多出一笔没有署名的赎单。今早三个人都到得比往常早。",
        [
            ("沈砚秋", "当铺账房",
             "原在驿站当差，去岁转来当铺管账。账目过手必核三遍，偏偏昨夜的赎单不是他的笔迹。",
             "坐在账桌后，面前摊着账册", "困惑，存着戒心"),
            ("白篱", "来赎当的医女",
             "三个月前当了一对玉镯给病人抓药，今日攒够了钱来赎。单据在手，理直气壮。",
             "站在柜台外，捏着当票", "急切，不容推脱"),
            ("陆明澜", "当铺朝奉",
             "掌眼二十年，认得出每一件进出的东西。昨夜最后一个离开账房的就是他。",
             "立在货架旁，背着手", "从容过头，近乎刻意"),
        ],
    ),
    _scene(
        "fix-zh-004", "山门借宿", "zh", "extracted",
        "暴雨将至的傍晚", "半山古寺的山门下",
        "寺里只剩一间客房。两个赶路的人同时到了山门，而知客僧恰好不在。",
        [
            ("顾长风", "赴考的举子",
             "误了船期，改走山路，盘缠将尽。读书人的体面还剩一点，正打算用它换一夜安睡。",
             "立在山门左侧，抖着湿透的袍角", "疲惫，放不下身段"),
            ("白篱", "行医的医女",
             "出诊归来遇雨，药箱不能淋湿。走惯江湖，不信先来后到，只信谁更需要。",
             "立在山门右侧，把药箱护在檐下", "干脆，毫不退让"),
        ],
    ),
]

CASTS = {
    "fix-en-001": {"Mara Voss": "model-alpha", "Ellis Grey": "model-beta"},
    "fix-en-002": {"Tobin Hale": "model-alpha", "Sera Quint": "model-beta",
                   "Mara Voss": "model-alpha"},
    "fix-zh-001": {"沈砚秋": "model-alpha", "顾长风": "model-beta"},
    "fix-zh-002": {"白篱": "model-alpha", "陆明澜": "model-beta"},
}


def write_scene_corpus() -> None:
    if SCENES_DIR.exists():
        shutil.rmtree(SCENES_DIR)
    SCENES_DIR.mkdir(parents=True)
    for scene in SCENES:
        errors = scene_errors(scene)
        if errors:
            raise SystemExit(f"{scene.id}: {[v.message for v in errors]}")
        store_scene(scene, SCENES_DIR / f"{scene.id}.json")
    print(f"scenes: {len(SCENES)} -> {SCENES_DIR}")


def record_stores() -> None:
    if REPLAY_DIR.exists():
        shutil.rmtree(REPLAY_DIR)
    config = GatewayConfig()
    replayed = [s for s in SCENES if s.id in REPLAYED_SCENES]

    with tempfile.TemporaryDirectory() as tmp:
        runs_root = Path(tmp) / "runs"
        gateway = build_gateway(config, record_dir=REPLAY_DIR / "runs")
        manifest = run_batch(replayed, CASTS, NARRATOR, gateway,
                             rounds=ROUNDS, parallelism=1, out_root=runs_root)
        bad = [r for r in manifest["runs"] if r["status"] != "completed"]
        if bad:
            raise SystemExit(f"fixture runs failed: {bad}")

        gateway = build_gateway(config, record_dir=REPLAY_DIR / "eval")
        records, excluded = evaluate_runs(runs_root, JUDGE, gateway, UsageLedger())
        if excluded or len(records) != 9:
            raise SystemExit(f"fixture eval: {len(records)} records, excluded {excluded}")

        gateway = build_gateway(config, record_dir=REPLAY_DIR / "reflective")
        selected = select_for_model(runs_root, REFLECTIVE_MODEL)
        examples = reflective_examples(gateway, selected, REFLECTIVE_MODEL, UsageLedger())
        if not examples:
            raise SystemExit("fixture reflective produced no examples")

    for store in sorted(REPLAY_DIR.iterdir()):
        count = len(list(store.glob("*.json")))
        print(f"replay store {store.name}: {count} exchanges")


if __name__ == "__main__":
    write_scene_corpus()
    record_stores()
