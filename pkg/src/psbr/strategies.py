"""Bounded-memory strategy menus compiled to finite table automata.

Every menu strategy is a deterministic finite automaton over own-view joint
actions whose output is a mixed action:

* ``trans[state, phase, own, opp]`` gives the next state after a round,
* ``probs[state, phase, own]`` gives the action distribution in a state,

with ``phase = (t - 1) % 2``. State 0 is the empty-history state. Strategies
with memory bound kappa use the suffix states of length <= kappa directly as
their automaton states; trigger and punishment strategies carry a trigger bit
or a punishment counter instead. Evaluation replays the history through the
automaton, so a strategy is a pure function of ``(t, history)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .games import (
    GameSpec,
    History,
    InvalidHistoryError,
    JointAction,
    MemoryState,
    get_game,
    update_state,
)
from .kernels import draw_index


class MenuNotFoundError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class StrategySpec:
    label: str
    description: str
    own_actions: tuple[str, ...]
    opp_actions: tuple[str, ...]
    trans: np.ndarray
    probs: np.ndarray
    state_labels: tuple
    kappa: int | None = None
    state_bits: int = 0
    phase_dependent: bool = False
    _own_index: dict = field(default=None, repr=False)
    _opp_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_own_index", {a: k for k, a in enumerate(self.own_actions)})
        object.__setattr__(self, "_opp_index", {a: k for k, a in enumerate(self.opp_actions)})
        self.trans.setflags(write=False)
        self.probs.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def index_pair(self, a: JointAction) -> tuple[int, int]:
        try:
            return self._own_index[a[0]], self._opp_index[a[1]]
        except (KeyError, IndexError, TypeError):
            raise InvalidHistoryError(
                f"{self.label}: {a!r} is not an own-view joint action over "
                f"{self.own_actions} x {self.opp_actions}"
            ) from None

    def step(self, state: int, t: int, a: JointAction) -> int:
        """State after observing joint action ``a`` (own view) at round ``t``."""
        i, j = self.index_pair(a)
        return int(self.trans[state, (t - 1) % 2, i, j])

    def state_after(self, h: Sequence[JointAction]) -> int:
        s = 0
        for u, a in enumerate(h, start=1):
            s = self.step(s, u, a)
        return s

    def dist_vector(self, state: int, t: int) -> np.ndarray:
        return self.probs[state, (t - 1) % 2]

    def action_distribution(self, t: int, h: Sequence[JointAction]) -> dict[str, float]:
        if len(h) != t - 1:
            raise InvalidHistoryError(f"round {t} needs a history of {t - 1} rounds, got {len(h)}")
        p = self.dist_vector(self.state_after(h), t)
        return {a: float(p[k]) for k, a in enumerate(self.own_actions)}


# ---------------------------------------------------------------------------
# builders


def _vec(actions: Sequence[str], dist: dict[str, float]) -> np.ndarray:
    v = np.array([float(dist.get(a, 0.0)) for a in actions])
    if abs(v.sum() - 1.0) > 1e-12 or (v < 0).any():
        raise ValueError(f"bad distribution {dist}")
    return v


def _binary(actions: Sequence[str], p_first: float) -> dict[str, float]:
    return {actions[0]: p_first, actions[1]: 1.0 - p_first}


def memory_strategy(
    label: str,
    description: str,
    own: Sequence[str],
    opp: Sequence[str],
    kappa: int,
    rule: Callable[[MemoryState, int], dict[str, float]],
) -> StrategySpec:
    """Compile a kappa-memory rule ``rule(suffix, phase)`` over all suffix states."""
    own, opp = tuple(own), tuple(opp)
    joint = list(product(own, opp))
    states: list[MemoryState] = [()]
    for length in range(1, kappa + 1):
        states.extend(tuple(x) for x in product(joint, repeat=length))
    index = {s: k for k, s in enumerate(states)}
    n = len(states)
    trans = np.zeros((n, 2, len(own), len(opp)), dtype=np.int64)
    probs = np.zeros((n, 2, len(own)))
    phase_dependent = False
    for k, s in enumerate(states):
        for ph in range(2):
            probs[k, ph] = _vec(own, rule(s, ph))
            for i, a in enumerate(own):
                for j, b in enumerate(opp):
                    trans[k, ph, i, j] = index[update_state(s, (a, b), kappa)]
        if not np.array_equal(probs[k, 0], probs[k, 1]):
            phase_dependent = True
    return StrategySpec(label, description, own, opp, trans, probs, tuple(states),
                        kappa=kappa, phase_dependent=phase_dependent)


def trigger_strategy(
    label: str,
    description: str,
    own: Sequence[str],
    opp: Sequence[str],
    normal: Callable[[int], dict[str, float]],
    punish: dict[str, float],
    fires: Callable[[int, str, str], bool],
    punish_rounds: int | None = None,
) -> StrategySpec:
    """Compile a trigger automaton.

    In the normal state the strategy plays ``normal(phase)``. A round for which
    ``fires(phase, own, opp)`` holds moves it to punishment, where it plays
    ``punish`` forever (``punish_rounds=None``) or for ``punish_rounds`` rounds,
    after which it returns to the normal state. Rounds played during
    punishment never fire.
    """
    own, opp = tuple(own), tuple(opp)
    n_pun = 1 if punish_rounds is None else punish_rounds
    n = 1 + n_pun
    trans = np.zeros((n, 2, len(own), len(opp)), dtype=np.int64)
    probs = np.zeros((n, 2, len(own)))
    for ph in range(2):
        probs[0, ph] = _vec(own, normal(ph))
        for k in range(1, n):
            probs[k, ph] = _vec(own, punish)
        for i, a in enumerate(own):
            for j, b in enumerate(opp):
                trans[0, ph, i, j] = 1 if fires(ph, a, b) else 0
                for k in range(1, n):
                    if punish_rounds is None:
                        trans[k, ph, i, j] = k
                    else:
                        trans[k, ph, i, j] = (k + 1) % n
    if punish_rounds is None:
        labels = ("normal", "triggered")
        bits = 1
    else:
        labels = ("normal",) + tuple(f"punish_{punish_rounds - k + 1}_left" for k in range(1, n))
        bits = max(1, int(np.ceil(np.log2(n))))
    phase_dependent = not np.array_equal(probs[:, 0], probs[:, 1]) or not np.array_equal(trans[:, 0], trans[:, 1])
    return StrategySpec(label, description, own, opp, trans, probs, labels,
                        kappa=None, state_bits=bits, phase_dependent=phase_dependent)


def constant_strategy(label, description, own, opp, dist) -> StrategySpec:
    return memory_strategy(label, description, own, opp, 0, lambda s, ph: dist)


def phase_strategy(label, description, own, opp, odd, even) -> StrategySpec:
    """Memoryless strategy that depends on round parity only (odd rounds: ``odd``)."""
    return memory_strategy(label, description, own, opp, 0, lambda s, ph: odd if ph == 0 else even)


# ---------------------------------------------------------------------------
# menus


def _bos_menu(own, opp) -> list[StrategySpec]:
    J, F = own

    def wsls(s, ph):
        if not s:
            return _binary(own, 0.5)
        me, you = s[-1]
        nxt = me if me == you else (F if me == J else J)
        return {nxt: 1.0}

    def mlur(s, ph):
        if not s:
            return _binary(own, 0.5)
        me, you = s[-1]
        return {me: 1.0} if me == you else _binary(own, 0.5)

    return [
        constant_strategy("insist_j", f"always plays {J}", own, opp, {J: 1.0}),
        constant_strategy("insist_f", f"always plays {F}", own, opp, {F: 1.0}),
        memory_strategy("wsls_bos", "random first round; repeat own action after a match, switch after a mismatch", own, opp, 1, wsls),
        memory_strategy("mlur", "random first round; repeat own action after a match, randomise 50/50 after a mismatch", own, opp, 1, mlur),
        phase_strategy("alternate_phase0", f"{J} on odd rounds, {F} on even rounds", own, opp, {J: 1.0}, {F: 1.0}),
        phase_strategy("alternate_phase1", f"{F} on odd rounds, {J} on even rounds", own, opp, {F: 1.0}, {J: 1.0}),
        constant_strategy("noisy_insist_j", f"plays {J} with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("noisy_insist_f", f"plays {J} with probability 0.1 every round", own, opp, _binary(own, 0.1)),
    ]


def _recent_opp(s: MemoryState, action: str) -> bool:
    return any(b == action for _, b in s)


def _pd_like_menu(own, opp) -> list[StrategySpec]:
    """PD menu (cooperate = first action, defect = second)."""
    C, D = own
    oc, od = opp

    def tft(s, ph):
        return {C: 1.0} if not s or s[-1][1] == oc else {D: 1.0}

    def wsls(s, ph):
        if not s:
            return {C: 1.0}
        me, you = s[-1]
        matched = own.index(me) == opp.index(you)
        return {me: 1.0} if matched else {(D if me == C else C): 1.0}

    def soft_grim(s, ph):
        return {D: 1.0} if _recent_opp(s, od) else {C: 1.0}

    return [
        constant_strategy("allc", f"always plays {C}", own, opp, {C: 1.0}),
        constant_strategy("alld", f"always plays {D}", own, opp, {D: 1.0}),
        constant_strategy("soft_allc", f"plays {C} with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("soft_alld", f"plays {C} with probability 0.1 every round", own, opp, _binary(own, 0.1)),
        memory_strategy("tft", f"{C} first, then copies the opponent's previous action", own, opp, 1, tft),
        memory_strategy("wsls", f"{C} first; repeat own action after a match, switch after a mismatch", own, opp, 1, wsls),
        memory_strategy("soft_grim_trigger", f"{D} if the opponent played {od} in either of the last two rounds, else {C}", own, opp, 2, soft_grim),
        trigger_strategy("grim_trigger", f"{C} until the opponent first plays {od}, then {D} forever", own, opp,
                         lambda ph: {C: 1.0}, {D: 1.0}, lambda ph, a, b: b == od),
    ]


def _harmony_menu(own, opp) -> list[StrategySpec]:
    C, D = own

    def tft(s, ph):
        return {C: 1.0} if not s or s[-1][1] == "C" else {D: 1.0}

    def stft(s, ph):
        if not s:
            return {D: 1.0}
        return {C: 1.0} if s[-1][1] == "C" else {D: 1.0}

    def gtft(s, ph):
        if not s or s[-1][1] == "C":
            return {C: 1.0}
        return _binary(own, 0.3)

    def wsls(s, ph):
        if not s:
            return {C: 1.0}
        me, you = s[-1]
        return {me: 1.0} if me == you else {(D if me == C else C): 1.0}

    return [
        constant_strategy("allc", "always plays C", own, opp, {C: 1.0}),
        constant_strategy("alld", "always plays D", own, opp, {D: 1.0}),
        memory_strategy("tft", "C first, then copies the opponent's previous action", own, opp, 1, tft),
        memory_strategy("stft", "D first, then copies the opponent's previous action", own, opp, 1, stft),
        memory_strategy("generous_tft", "C first; C after opponent C, else C with probability 0.3", own, opp, 1, gtft),
        trigger_strategy("grim_trigger", "C until the opponent first plays D, then D forever", own, opp,
                         lambda ph: {C: 1.0}, {D: 1.0}, lambda ph, a, b: b == "D"),
        memory_strategy("wsls_pavlov", "C first; repeat own action after a match, switch after a mismatch", own, opp, 1, wsls),
        constant_strategy("random_pc", "plays C with probability 0.5 every round", own, opp, _binary(own, 0.5)),
    ]


def _promo_menu(own, opp) -> list[StrategySpec]:
    R, P, Z = "R", "P", "Z"

    def path(phase0: bool):
        # prescribed own-view joint action for a phase (0 = odd round)
        if phase0:
            return lambda ph: (P, R) if ph == 0 else (R, P)
        return lambda ph: (R, P) if ph == 0 else (P, R)

    def alternating(label, phase0, punish_rounds, description):
        prescribed = path(phase0)
        return trigger_strategy(
            label, description, own, opp,
            lambda ph: {prescribed(ph)[0]: 1.0},
            {Z: 1.0},
            lambda ph, a, b: (a, b) != prescribed(ph),
            punish_rounds=punish_rounds,
        )

    return [
        constant_strategy("allR", "plays R every round", own, opp, {R: 1.0}),
        constant_strategy("allP", "plays P every round", own, opp, {P: 1.0}),
        constant_strategy("allZ", "plays Z every round", own, opp, {Z: 1.0}),
        constant_strategy("soft_allR", "plays R with probability 0.9 and P with probability 0.1", own, opp, {R: 0.9, P: 0.1}),
        constant_strategy("soft_allP", "plays P with probability 0.9 and R with probability 0.1", own, opp, {P: 0.9, R: 0.1}),
        alternating("mad0", True, 2, "P on odd rounds and R on even rounds; after a deviation from that path, Z for 2 rounds, then resume"),
        alternating("mad1", False, 2, "R on odd rounds and P on even rounds; after a deviation from that path, Z for 2 rounds, then resume"),
        alternating("grim_trigger", True, None, "P on odd rounds and R on even rounds until the first deviation, then Z forever"),
    ]


def _helper_menu(own, opp) -> list[StrategySpec]:
    H, N = own

    def tft(s, ph):
        return {H: 1.0} if not s or s[-1][1] == "W" else {N: 1.0}

    def forgive(s, ph):
        return {N: 1.0} if _recent_opp(s, "S") else {H: 1.0}

    def wsls(s, ph):
        if not s:
            return {H: 1.0}
        me, you = s[-1]
        return {me: 1.0} if you == "W" else {(N if me == H else H): 1.0}

    return [
        constant_strategy("always_help", "always helps", own, opp, {H: 1.0}),
        constant_strategy("never_help", "never helps", own, opp, {N: 1.0}),
        memory_strategy("tft_help", "helps first, then helps iff the recipient worked last round", own, opp, 1, tft),
        memory_strategy("grim_forgive", "withholds help if the recipient shirked in either of the last two rounds, else helps", own, opp, 2, forgive),
        trigger_strategy("grim_nohelp", "helps until the recipient first shirks, then never helps again", own, opp,
                         lambda ph: {H: 1.0}, {N: 1.0}, lambda ph, a, b: b == "S"),
        memory_strategy("wsls_helper", "helps first; repeats own action if the recipient worked, otherwise switches", own, opp, 1, wsls),
        constant_strategy("noisy_help", "helps with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("noisy_nohelp", "helps with probability 0.1 every round", own, opp, _binary(own, 0.1)),
    ]


def _recipient_menu(own, opp) -> list[StrategySpec]:
    W, S = own

    def work_if_helped(s, ph):
        if not s:
            return _binary(own, 0.5)
        return {W: 1.0} if s[-1][1] == "H" else {S: 1.0}

    def exploit_help(s, ph):
        if not s:
            return _binary(own, 0.5)
        return {W: 1.0} if s[-1][1] == "N" else {S: 1.0}

    def forgiving_work(s, ph):
        if not s or s[-1][1] == "H":
            return {W: 1.0}
        return _binary(own, 0.3)

    return [
        constant_strategy("always_work", "always works", own, opp, {W: 1.0}),
        constant_strategy("always_shirk", "always shirks", own, opp, {S: 1.0}),
        memory_strategy("work_if_helped", "random first round; works iff the helper helped last round", own, opp, 1, work_if_helped),
        memory_strategy("exploit_help", "random first round; works iff the helper did not help last round", own, opp, 1, exploit_help),
        trigger_strategy("grim_shirk_after_nohelp", "works until the helper first withholds help, then shirks forever", own, opp,
                         lambda ph: {W: 1.0}, {S: 1.0}, lambda ph, a, b: b == "N"),
        memory_strategy("forgiving_work", "works first; works after help, otherwise works with probability 0.3", own, opp, 1, forgiving_work),
        constant_strategy("noisy_work", "works with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("noisy_shirk", "works with probability 0.1 every round", own, opp, _binary(own, 0.1)),
    ]


def _seller_menu(own, opp) -> list[StrategySpec]:
    HQ, LQ = own

    def hq_if_bought(s, ph):
        if not s:
            return _binary(own, 0.5)
        return {HQ: 1.0} if s[-1][1] == "B" else {LQ: 1.0}

    def lq_if_boycott(s, ph):
        if not s:
            return _binary(own, 0.5)
        return {LQ: 1.0} if s[-1][1] == "D" else {HQ: 1.0}

    def forgiving(s, ph):
        return {LQ: 1.0} if _recent_opp(s, "D") else {HQ: 1.0}

    return [
        constant_strategy("always_hq", "always sells high quality", own, opp, {HQ: 1.0}),
        constant_strategy("always_lq", "always sells low quality", own, opp, {LQ: 1.0}),
        memory_strategy("hq_if_bought_last", "random first round; high quality iff the buyer bought last round", own, opp, 1, hq_if_bought),
        trigger_strategy("grim_hq_until_boycott", "high quality until the buyer first declines, then low quality forever", own, opp,
                         lambda ph: {HQ: 1.0}, {LQ: 1.0}, lambda ph, a, b: b == "D"),
        memory_strategy("lq_if_boycott_last", "random first round; low quality iff the buyer declined last round", own, opp, 1, lq_if_boycott),
        memory_strategy("grim_forgiving", "low quality if the buyer declined in either of the last two rounds, else high quality", own, opp, 2, forgiving),
        constant_strategy("noisy_hq", "high quality with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("noisy_lq", "high quality with probability 0.1 every round", own, opp, _binary(own, 0.1)),
    ]


def _buyer_menu(own, opp) -> list[StrategySpec]:
    B, D = own

    def tft_buy(s, ph):
        if not s:
            return _binary(own, 0.5)
        return {B: 1.0} if s[-1][1] == "HQ" else {D: 1.0}

    def generous(s, ph):
        if not s or s[-1][1] == "HQ":
            return {B: 1.0}
        return _binary(own, 0.3)

    def forgiving(s, ph):
        return {D: 1.0} if _recent_opp(s, "LQ") else {B: 1.0}

    return [
        constant_strategy("always_buy", "always buys", own, opp, {B: 1.0}),
        constant_strategy("never_buy", "never buys", own, opp, {D: 1.0}),
        constant_strategy("soft_always_buy", "buys with probability 0.9 every round", own, opp, _binary(own, 0.9)),
        constant_strategy("soft_never_buy", "buys with probability 0.1 every round", own, opp, _binary(own, 0.1)),
        memory_strategy("tft_buy", "random first round; buys iff the seller sold high quality last round", own, opp, 1, tft_buy),
        memory_strategy("generous_buy", "buys first; buys after high quality, otherwise buys with probability 0.3", own, opp, 1, generous),
        trigger_strategy("grim_boycott", "buys until the seller first sells low quality, then never buys", own, opp,
                         lambda ph: {B: 1.0}, {D: 1.0}, lambda ph, a, b: b == "LQ"),
        memory_strategy("grim_forgiving", "declines if the seller sold low quality in either of the last two rounds, else buys", own, opp, 2, forgiving),
    ]


HARMONY_ACTIONS = ("C", "D")

_MENU_BUILDERS: dict[tuple[str, str], tuple[Callable, tuple, tuple]] = {
    ("BoS", "player1"): (_bos_menu, ("J", "F"), ("J", "F")),
    ("BoS", "player2"): (_bos_menu, ("J", "F"), ("J", "F")),
    ("PD", "player1"): (_pd_like_menu, ("J", "F"), ("J", "F")),
    ("PD", "player2"): (_pd_like_menu, ("J", "F"), ("J", "F")),
    ("Harmony", "player1"): (_harmony_menu, HARMONY_ACTIONS, HARMONY_ACTIONS),
    ("Harmony", "player2"): (_harmony_menu, HARMONY_ACTIONS, HARMONY_ACTIONS),
    ("Promo", "player1"): (_promo_menu, ("R", "P", "Z"), ("R", "P", "Z")),
    ("Promo", "player2"): (_promo_menu, ("R", "P", "Z"), ("R", "P", "Z")),
    ("Samaritan", "helper"): (_helper_menu, ("H", "N"), ("W", "S")),
    ("Samaritan", "recipient"): (_recipient_menu, ("W", "S"), ("H", "N")),
    ("Lemons", "seller"): (_seller_menu, ("HQ", "LQ"), ("B", "D")),
    ("Lemons", "buyer"): (_buyer_menu, ("B", "D"), ("HQ", "LQ")),
}

_MENU_CACHE: dict[tuple[str, str], tuple[StrategySpec, ...]] = {}


def _menu_key(game, role) -> tuple[str, str]:
    name = game.name if isinstance(game, GameSpec) else str(game)
    if isinstance(role, int):
        role = get_game(name).roles[role]
    for g, r in _MENU_BUILDERS:
        if g.lower() == name.lower() and r == role:
            return g, r
    raise MenuNotFoundError(f"no strategy menu registered for ({name!r}, {role!r})")


def menu_for(game: GameSpec | str, role: str | int) -> list[StrategySpec]:
    """The strategy menu for ``role`` in ``game``, in registry order."""
    key = _menu_key(game, role)
    if key not in _MENU_CACHE:
        build, own, opp = _MENU_BUILDERS[key]
        menu = tuple(build(own, opp))
        labels = [s.label for s in menu]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in menu {key}")
        _MENU_CACHE[key] = menu
    return list(_MENU_CACHE[key])


def registered_menus() -> list[tuple[str, str]]:
    return list(_MENU_BUILDERS)


def strategy_by_label(game, role, label: str) -> StrategySpec:
    for s in menu_for(game, role):
        if s.label == label:
            return s
    raise MenuNotFoundError(f"{label!r} is not in the menu for ({game}, {role})")


def menu_document(game, role) -> list[dict[str, str]]:
    """Labels and descriptions, as used by prompt builders."""
    return [{"label": s.label, "description": s.description} for s in menu_for(game, role)]


def registry_document() -> dict[str, list[dict[str, str]]]:
    return {f"{g}/{r}": menu_document(g, r) for g, r in _MENU_BUILDERS}


# ---------------------------------------------------------------------------
# history helpers


def opponent_view(h: Sequence[JointAction]) -> History:
    """Swap every round's tuple so it reads (opponent action, own action)."""
    return tuple((b, a) for a, b in h)


def action_distribution(s: StrategySpec, t: int, h: Sequence[JointAction]) -> dict[str, float]:
    return s.action_distribution(t, h)


def sample_action(s: StrategySpec, t: int, h: Sequence[JointAction], rng: np.random.Generator) -> str:
    if len(h) != t - 1:
        raise InvalidHistoryError(f"round {t} needs a history of {t - 1} rounds, got {len(h)}")
    p = s.dist_vector(s.state_after(h), t)
    return s.own_actions[draw_index(p, rng.random())]
