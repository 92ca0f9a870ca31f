"""A rule-based stand-in for a chat model.

Every reply is a pure function of the request: the request hash seeds a
private RNG, the prompt's format anchors decide which kind of reply to
synthesize, and names are lifted from the prompt's structural labels
(``Actor:``, ``Characters present:``, ...). Labels stay English in every
prompt language, so one set of anchors covers the whole corpus; reply
prose follows the prompt's language.

The point is not realism. It is that whole pipelines can be recorded,
replayed, and asserted on without a network or a nondeterministic model,
while still exercising every parser and every branch of the story loop.
"""

from __future__ import annotations

import random
import re

from .gateway import ChatRequest, ChatResponse, embed_text, estimate_tokens, request_hash

_CJK = re.compile(r"[一-鿿]")
_ACTOR = re.compile(r"^Actor:\s*(.+)$", re.MULTILINE)
_ROSTER = re.compile(r"^Characters present:\s*(.+)$", re.MULTILINE)
_CHARACTER = re.compile(r"^(?:Character|Performance under review):\s*(.+)$", re.MULTILINE)
_PLAYING_EN = re.compile(r"You are playing (.+?) \(")
_PLAYING_ZH = re.compile(r"出演(.+?)\(")
_CAST_RANGE_EN = re.compile(r"between (\d+) and (\d+) characters")
_CAST_RANGE_ZH = re.compile(r"在(\d+)到(\d+)人之间")
# Two-word capitalized runs that repeat are good name candidates in English prose.
_CAP_PAIR = re.compile(r"\b([A-Z][a-z]+(?: [A-Z][a-z]+)?)\b")

_EN_STOPWORDS = {
    "The", "A", "An", "And", "But", "He", "She", "They", "It", "His", "Her",
    "Their", "When", "Then", "There", "This", "That", "What", "Who", "In",
    "On", "At", "By", "As", "So", "Not", "No", "Yes", "If", "For",
}

_EN_NAMES = ("Mara Voss", "Ellis Grey", "Tobin Hale", "Sera Quint", "Ivo Marsh", "Lena Carrow")
_ZH_NAMES = ("沈砚秋", "顾长风", "白芷", "陆明川", "温小棠", "霍凌")

_EN_TITLES = ("The Last Ferry", "Ash and Oath", "The Quiet Ward", "Signal Fire", "The Debt Ledger")
_ZH_TITLES = ("最后一班渡船", "灰烬与誓言", "静默病房", "烽火信号", "账簿余债")
_EN_TIMES = ("Dusk", "Just past midnight", "An early spring morning", "The third night of the storm")
_ZH_TIMES = ("黄昏", "刚过午夜", "初春的清晨", "风暴的第三夜")
_EN_PLACES = ("a rain-slicked quay", "the manor's cold kitchen", "a field hospital tent",
              "the archive basement", "the inn's back room")
_ZH_PLACES = ("雨水打滑的码头", "庄园冰冷的厨房", "一顶战地医疗帐篷", "档案馆地下室", "客栈后堂")
_EN_ROLES = ("the one who keeps the ledger", "an old rival returned", "the reluctant host",
             "a stranger with a message", "the keeper of the door")
_ZH_ROLES = ("掌管账簿的人", "去而复返的旧对手", "不情愿的东道主", "带口信的陌生人", "守门人")
_EN_TRAITS = ("owes a debt nobody mentions", "remembers the old bargain differently",
              "has rehearsed this meeting for years", "trusts locks more than people")
_ZH_TRAITS = ("背着一笔无人提起的债", "对旧日的约定另有记忆", "为这次会面演练了多年", "信门锁胜过信人")
_EN_POSITIONS = ("near the door", "by the shuttered window", "at the head of the table", "half in shadow")
_ZH_POSITIONS = ("靠近门口", "在关着的窗边", "坐在桌首", "半隐在阴影里")
_EN_STATES = ("outwardly calm, inwardly coiled", "tired but watchful", "impatient and trying to hide it",
              "steady, with something held back")
_ZH_STATES = ("表面平静,内里紧绷", "疲惫却警觉", "按捺着不耐烦", "沉稳,却有所保留")

_EN_MOVES = ("lowers their voice and lays the folded paper on the table",
             "steps between the lamp and the door, blocking the light",
             "asks, too evenly, who else knows about this",
             "turns a chair around and sits, waiting to be contradicted",
             "pockets the key and pretends not to have seen the look")
_ZH_MOVES = ("压低声音,把折好的纸放在桌上",
             "挡在灯与门之间,遮住了光",
             "语气过分平稳地问,还有谁知道这件事",
             "把椅子转过来坐下,等着对方反驳",
             "把钥匙收进口袋,装作没看见那个眼神")

_EN_FEELINGS = ("left with fewer options than a moment ago",
                "forced to choose between pride and the easier lie",
                "suddenly aware of how close the door is",
                "caught between answering and walking out")
_ZH_FEELINGS = ("可选的退路比刚才更少了",
                "被迫在自尊与更省事的谎言之间二选一",
                "忽然意识到门有多近",
                "夹在回答与离开之间")


def _is_zh(prompt: str) -> bool:
    return bool(_CJK.search(prompt))


def _pick(rng: random.Random, pool: tuple[str, ...]) -> str:
    return pool[rng.randrange(len(pool))]


class SyntheticBackend:
    """Deterministic format-following responder; see module docstring."""

    def __init__(self, embedding_dim: int = 64):
        self.embedding_dim = embedding_dim

    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt = "\n".join(content for _role, content in request.messages)
        seed = int(request_hash(request)[:16], 16)
        rng = random.Random(seed)
        content = self._reply(prompt, rng)
        return ChatResponse(
            content=content,
            input_tokens=estimate_tokens(prompt),
            output_tokens=estimate_tokens(content),
        )

    def embed(self, text: str):
        return embed_text(text, self.embedding_dim)

    # -- reply synthesis ----------------------------------------------------

    def _reply(self, prompt: str, rng: random.Random) -> str:
        zh = _is_zh(prompt)
        # Anchors are checked from most to least specific; each corresponds
        # to one prompt template's required output format.
        if "Knowledge Accuracy:" in prompt:
            return self._metric_scores(rng)
        if "Coherence:" in prompt and "Conformity:" in prompt:
            return self._scene_quality(rng, creativity="Creativity:" in prompt)
        if "Title:" in prompt and "Characters:" in prompt:
            return self._scene_draft(prompt, rng, zh)
        if ";;" in prompt:
            return self._influence(prompt, rng, zh)
        if "Perception of Others:" in prompt:
            return self._env_belief(rng, zh)
        if "Belief:" in prompt:
            return self._self_belief(rng, zh)
        if "Position:" in prompt and "State:" in prompt:
            return self._character_update(prompt, rng, zh)
        if "Time before:" in prompt:
            return self._scene_update(rng, zh)
        if "[KEEP]" in prompt:
            return self._rewrite(prompt, rng, zh)
        if "Impact on you:" in prompt:
            return self._move(self._actor_name(prompt, zh), rng, zh, reactive=True)
        if "Reaction:" in prompt:
            return self._outcome(prompt, rng, zh)
        if "Transcript:" in prompt:
            return self._critique(prompt, rng, zh)
        return self._move(self._actor_name(prompt, zh), rng, zh, reactive=False)

    def _actor_name(self, prompt: str, zh: bool) -> str:
        for pattern in (_PLAYING_EN, _PLAYING_ZH, _CHARACTER, _ACTOR):
            m = pattern.search(prompt)
            if m:
                return m.group(1).strip()
        return "他们" if zh else "The actor"

    def _move(self, name: str, rng: random.Random, zh: bool, *, reactive: bool) -> str:
        move = _pick(rng, _ZH_MOVES if zh else _EN_MOVES)
        if reactive:
            return f"{name}停顿了一瞬,随即{move}。" if zh else \
                f"{name} holds still a beat, then {move}."
        return f"{name}{move}。" if zh else f"{name} {move}."

    def _influence(self, prompt: str, rng: random.Random, zh: bool) -> str:
        actor_m = _ACTOR.search(prompt)
        actor = actor_m.group(1).strip() if actor_m else "Unknown"
        roster_m = _ROSTER.search(prompt)
        roster = [n.strip() for n in roster_m.group(1).split(",")] if roster_m else [actor]
        others = [n for n in roster if n != actor]
        # Mostly the move lands on someone else; now and then it only moves
        # the actor, which is the no-responder branch downstream.
        if others and rng.random() < 0.7:
            target = others[rng.randrange(len(others))]
        else:
            target = actor
        feeling = _pick(rng, _ZH_FEELINGS if zh else _EN_FEELINGS)
        impact = f"{target}发现自己{feeling}" if zh else f"{target} is {feeling}"
        return f"[{actor}];;[{target}];;[{impact}]"

    def _outcome(self, prompt: str, rng: random.Random, zh: bool) -> str:
        actor_m = _ACTOR.search(prompt)
        actor = actor_m.group(1).strip() if actor_m else ("一方" if zh else "One of them")
        responder_m = re.search(r"^Responder:\s*(.+)$", prompt, re.MULTILINE)
        responder = responder_m.group(1).strip() if responder_m else ("另一方" if zh else "the other")
        if zh:
            closers = ("谁都没有退让,但局面已经变了", "空气松动了一线,代价尚未言明",
                       "这一回合以不稳的僵持收场", "两人都听见了没说出口的那句话")
            return f"{actor}与{responder}的交锋告一段落:{_pick(rng, closers)}。"
        closers = ("neither yields, but the ground between them has shifted",
                   "the air gives a little, at a price nobody names",
                   "the exchange ends in an uneasy stalemate",
                   "both hear the sentence that never gets spoken")
        return f"The exchange between {actor} and {responder} settles: {_pick(rng, closers)}."

    def _self_belief(self, rng: random.Random, zh: bool) -> str:
        if zh:
            return ("Belief: 这间屋子里没有一句话是白说的。\n"
                    f"Desire: {_pick(rng, ('先弄清对方究竟知道多少', '把主动权握回手里', '不动声色地找到退路'))}。\n"
                    f"Intention: {_pick(rng, ('下一步先试探再表态', '把话题引回自己熟悉的地盘', '观察谁先沉不住气'))}。")
        return ("Belief: Nothing said in this room tonight is wasted breath.\n"
                f"Desire: {_pick(rng, ('To learn how much the other side already knows', 'To take back the initiative', 'To find an exit without showing it'))}.\n"
                f"Intention: {_pick(rng, ('Probe first, commit after', 'Steer the talk back onto familiar ground', 'Watch for who loses patience first'))}.")

    def _env_belief(self, rng: random.Random, zh: bool) -> str:
        if zh:
            return ("Perception of Others: 在场的人各有算计,没有谁全说真话。\n"
                    "Understanding of the Scene: 局面比开场时更紧,退路正在减少。\n"
                    f"Influence on Actions: {_pick(rng, ('接下来要少说多看', '得加快节奏,不能再拖', '先稳住场面再图其他'))}。")
        return ("Perception of Others: Everyone present is playing an angle; nobody is telling the whole truth.\n"
                "Understanding of the Scene: The situation is tighter than when it began, and exits are closing.\n"
                f"Influence on Actions: {_pick(rng, ('Say less, watch more', 'Move faster; waiting costs too much now', 'Steady the room first, everything else after'))}.")

    def _character_update(self, prompt: str, rng: random.Random, zh: bool) -> str:
        name = self._actor_name(prompt, zh)
        pos = _pick(rng, _ZH_POSITIONS if zh else _EN_POSITIONS)
        state = _pick(rng, _ZH_STATES if zh else _EN_STATES)
        if zh:
            return f"Position: {name}现在{pos}。\nState: {state}。"
        return f"Position: {name} is now {pos}.\nState: {state.capitalize()}."

    def _scene_update(self, rng: random.Random, zh: bool) -> str:
        if zh:
            return ("Time: 比先前又晚了一些。\n"
                    "Location: 原处,但屋里的站位已经变了。\n"
                    f"Description: 对峙在继续,{_pick(rng, ('话越说越少,分量却越来越重', '没人再碰桌上的东西', '门外的动静让所有人竖起了耳朵'))}。")
        return ("Time: A little later than before.\n"
                "Location: The same place, though everyone stands differently now.\n"
                f"Description: The standoff continues; {_pick(rng, ('fewer words are spoken and each one weighs more', 'nobody touches what lies on the table anymore', 'a sound outside has every ear straining'))}.")

    def _metric_scores(self, rng: random.Random) -> str:
        labels = ("Knowledge Accuracy", "Behavioral Accuracy", "Emotional Expression",
                  "Personality Traits", "Immersion", "Adaptability", "Behavioral Coherence")
        lines = []
        for label in labels:
            value = rng.choice([2.5, 3.0, 3.0, 3.5, 3.5, 4.0, 4.0, 4.5, 5.0])
            lines.append(f"{label}: {value:g}")
        return "\n".join(lines)

    def _scene_quality(self, rng: random.Random, *, creativity: bool) -> str:
        # Skewed high so most drafts pass the acceptance policy; retries
        # still happen when the draw comes up short.
        pool = [3.0, 3.5, 3.5, 4.0, 4.0, 4.5, 5.0]
        lines = []
        if creativity:
            lines.append(f"Creativity: {rng.choice(pool):g}")
        for label in ("Coherence", "Conformity", "Detail"):
            lines.append(f"{label}: {rng.choice(pool):g}")
        return "\n".join(lines)

    def _cast_names(self, prompt: str, rng: random.Random, zh: bool) -> list[str]:
        m = (_CAST_RANGE_ZH if zh else _CAST_RANGE_EN).search(prompt)
        lo, hi = (int(m.group(1)), int(m.group(2))) if m else (2, 4)
        count = rng.randint(lo, min(hi, lo + 1))  # lean small; big casts read worse
        pool = _ZH_NAMES if zh else _EN_NAMES
        # Reuse names that already appear in the prompt (a source excerpt),
        # so extracted scenes keep their own cast.
        found = [n for n in pool if n in prompt]
        if not zh:
            counts: dict[str, int] = {}
            for m2 in _CAP_PAIR.finditer(prompt):
                token = m2.group(1)
                if token not in _EN_STOPWORDS and all(w not in _EN_STOPWORDS for w in token.split()):
                    counts[token] = counts.get(token, 0) + 1
            for token, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                # A repeated capitalized token reads as a proper name.
                if n >= 2 and not any(token in f or f in token for f in found):
                    found.append(token)
        names = list(found[:count])
        for name in pool:
            if len(names) >= count:
                break
            if name not in names:
                names.append(name)
        return names[:count]

    def _scene_draft(self, prompt: str, rng: random.Random, zh: bool) -> str:
        names = self._cast_names(prompt, rng, zh)
        title = _pick(rng, _ZH_TITLES if zh else _EN_TITLES)
        when = _pick(rng, _ZH_TIMES if zh else _EN_TIMES)
        place = _pick(rng, _ZH_PLACES if zh else _EN_PLACES)
        if zh:
            desc = f"{'、'.join(names)}在{place}相对而立。旧事未了,新的变故已经找上门来,今晚必须有人先开口。"
        else:
            joined = names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]
            desc = (f"{joined} stand facing each other in {place}. "
                    "Old business is unfinished, new trouble has arrived, and tonight somebody has to speak first.")
        lines = [f"Title: {title}", f"Time: {when}", f"Location: {place.capitalize() if not zh else place}",
                 f"Description: {desc}", "Characters:"]
        for name in names:
            role = _pick(rng, _ZH_ROLES if zh else _EN_ROLES)
            trait_a = _pick(rng, _ZH_TRAITS if zh else _EN_TRAITS)
            trait_b = _pick(rng, _ZH_TRAITS if zh else _EN_TRAITS)
            pos = _pick(rng, _ZH_POSITIONS if zh else _EN_POSITIONS)
            state = _pick(rng, _ZH_STATES if zh else _EN_STATES)
            if zh:
                profile = f"{name},{role}。此人{trait_a},而且{trait_b}。"
                lines += [f"Name: {name}", f"Role: {role}", f"Profile: {profile}",
                          f"Position: {pos}", f"State: {state}"]
            else:
                profile = f"{name} is {role}. This one {trait_a}, and {trait_b}."
                lines += [f"Name: {name}", f"Role: {role}", f"Profile: {profile}",
                          f"Position: {pos.capitalize()}", f"State: {state.capitalize()}"]
        return "\n".join(lines)

    def _rewrite(self, prompt: str, rng: random.Random, zh: bool) -> str:
        if rng.random() < 0.35:
            return "[KEEP]"
        name = self._actor_name(prompt, zh)
        move = _pick(rng, _ZH_MOVES if zh else _EN_MOVES)
        if zh:
            return f"{name}吸取点评,这一次{move},分寸拿捏得更稳。"
        return f"{name}, taking the note, {move}, with surer timing this time."

    def _critique(self, prompt: str, rng: random.Random, zh: bool) -> str:
        name = self._actor_name(prompt, zh)
        if zh:
            strengths = _pick(rng, ("开场几回合台词贴合人物身份", "对他人动作的回应及时而具体", "情绪推进有层次"))
            weakness = _pick(rng, ("中段有一处明显跳出了既定动机", "个别回应过于客气,削弱了张力", "收尾略显仓促"))
            return f"这位演员对{name}的演绎{strengths};不足之处在于{weakness}。若重演,应当让动机贯穿每一步选择。"
        strengths = _pick(rng, ("the opening rounds keep the voice squarely in character",
                                "responses to other moves are prompt and concrete",
                                "the emotional build is nicely layered"))
        weakness = _pick(rng, ("one mid-scene choice drifts from the stated motive",
                               "a few replies are too polite for the stakes",
                               "the ending lands in a hurry"))
        return (f"In this performance of {name}, {strengths}; the weakness is that {weakness}. "
                f"On a second pass, the motive should drive every single choice.")
