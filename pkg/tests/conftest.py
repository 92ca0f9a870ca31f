from __future__ import annotations

import pytest

from dramatis.domain import CharacterProfile, Environment, Scene
from dramatis.gateway import Gateway
from dramatis.synthetic import SyntheticBackend


def make_scene(*, scene_id: str = "test-en-001", language: str = "en",
               origin: str = "extracted", n_characters: int = 2,
               title: str = "The Missing Page") -> Scene:
    """A small valid scene; characters beyond the first two are filler."""
    env = Environment(
        time="Dusk",
        location="The lighthouse gallery",
        description="Wind rattles the lamp-room glass while the keeper's "
                    "logbook lies open on the rail.",
    )
    pool = (
        CharacterProfile(name="Mara Voss", role="keeper",
                         profile="A stubborn keeper who trusts the lamp more than people.",
                         position="at the rail", state="wary"),
        CharacterProfile(name="Ellis Grey", role="inspector",
                         profile="A mild inspector hunting a missing ledger page.",
                         position="by the stairwell", state="curious"),
        CharacterProfile(name="Tobin Hale", role="boatman",
                         profile="A boatman who rows for anyone and answers to no one.",
                         position="on the landing", state="restless"),
        CharacterProfile(name="Sera Quint", role="storekeeper",
                         profile="A storekeeper who remembers every sale twice over.",
                         position="by the door", state="amused"),
    )
    return Scene(id=scene_id, title=title, language=language, origin=origin,
                 environment=env, characters=pool[:n_characters])


def make_zh_scene(*, scene_id: str = "test-zh-001") -> Scene:
    env = Environment(time="黄昏", location="灯塔回廊",
                      description="风敲着灯室的玻璃，守塔人的航海日志摊开在栏杆上。")
    chars = (
        CharacterProfile(name="沈砚秋", role="守塔人",
                         profile="一个固执的守塔人，信灯不信人。",
                         position="倚着栏杆", state="警惕"),
        CharacterProfile(name="顾长风", role="巡查员",
                         profile="一个温和的巡查员，正在追查丢失的一页台账。",
                         position="站在楼梯口", state="好奇"),
    )
    return Scene(id=scene_id, title="失踪的一页", language="zh", origin="extracted",
                 environment=env, characters=chars)


@pytest.fixture
def scene() -> Scene:
    return make_scene()


@pytest.fixture
def synthetic_gateway() -> Gateway:
    return Gateway(SyntheticBackend())
