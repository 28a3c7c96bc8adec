"""Evaluation quantities: equilibrium-path predicates and follow rates,
truncated weak distance between play-path laws, stage-Nash traces, the
on-path KL diagnostic and posterior-concentration traces.

Joint actions here are in role order unless stated otherwise.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .beliefs import PROB_CLIP
from .games import GameSpec, JointAction, UnknownGameError, get_game, is_stage_epsilon_nash
from .strategies import StrategySpec

DEFAULT_WINDOW = (161, 180)

StepFn = Callable[[Hashable, int, JointAction], tuple[bool, Hashable]]


@dataclass(frozen=True)
class PathPredicate:
    """On-path classifier driven by a small automaton over past rounds.

    ``step(state, t, a)`` returns whether round ``t``'s joint action ``a`` is
    on the path given the automaton state, plus the next state.
    """
    name: str
    step: StepFn = field(repr=False)
    initial: Hashable = "normal"

    def trace(self, actions: Sequence[JointAction]) -> list[bool]:
        out, s = [], self.initial
        for t, a in enumerate(actions, start=1):
            ok, s = self.step(s, t, tuple(a))
            out.append(ok)
        return out

    def classify(self, t: int, a: JointAction, prefix: Sequence[JointAction]) -> bool:
        if len(prefix) != t - 1:
            raise ValueError(f"round {t} needs a prefix of {t - 1} rounds")
        s = self.initial
        for u, b in enumerate(prefix, start=1):
            _, s = self.step(s, u, tuple(b))
        return self.step(s, t, tuple(a))[0]


def profile_predicate(name: str, allowed: Iterable[JointAction]) -> PathPredicate:
    allowed = frozenset(tuple(a) for a in allowed)
    return PathPredicate(name, lambda s, t, a: (a in allowed, s))


def phase_predicate(name: str, odd: JointAction, even: JointAction) -> PathPredicate:
    return PathPredicate(name, lambda s, t, a: (a == (odd if t % 2 == 1 else even), s))


def _pd_grim(s, t, a):
    if s == "normal":
        # the deviation round itself is the switch point and counts as on path
        return True, ("normal" if a == ("J", "J") else "punish")
    return a == ("F", "F"), s


def _promo_alternating(s, t, a):
    path = ("P", "R") if t % 2 == 1 else ("R", "P")
    if s == "normal":
        return True, ("normal" if a == path else 2)
    # punishment counts down whatever is played
    nxt = "normal" if s == 1 else s - 1
    return a == ("Z", "Z"), nxt


def _samaritan_work_for_help(s, t, a):
    if s == "normal":
        if a[1] == "S":
            return True, "punish"
        return a == ("H", "W"), s
    if s == "punish":
        if a[0] == "H":
            return True, "collapse"
        return a == ("N", "W"), s
    return a == ("H", "S"), s


def _lemons_trust(s, t, a):
    if s == "normal":
        if a == ("LQ", "B"):
            return True, "punish"
        return a == ("HQ", "B"), s
    return a == ("LQ", "D"), s


def _builtin(game: GameSpec) -> dict[str, PathPredicate]:
    name = game.name
    if name == "PD":
        return {
            "stage_nash": profile_predicate("stage_nash", [("F", "F")]),
            "grim": PathPredicate("grim", _pd_grim),
        }
    if name == "BoS":
        return {
            "stage_nash": profile_predicate("stage_nash", [("J", "J"), ("F", "F")]),
            "stick_j": profile_predicate("stick_j", [("J", "J")]),
            "stick_f": profile_predicate("stick_f", [("F", "F")]),
            "turn_taking_phase0": phase_predicate("turn_taking_phase0", ("J", "J"), ("F", "F")),
            "turn_taking_phase1": phase_predicate("turn_taking_phase1", ("F", "F"), ("J", "J")),
        }
    if name == "Promo":
        return {
            "stage_nash": profile_predicate("stage_nash", [("P", "P")]),
            "alternating": PathPredicate("alternating", _promo_alternating),
        }
    if name == "Samaritan":
        return {
            "stage_nash": profile_predicate("stage_nash", [("H", "S")]),
            "work_for_help": PathPredicate("work_for_help", _samaritan_work_for_help),
        }
    if name == "Lemons":
        return {
            "stage_nash": profile_predicate("stage_nash", [("LQ", "D")]),
            "trust": PathPredicate("trust", _lemons_trust),
        }
    raise UnknownGameError(f"no built-in path predicates for {name!r}")


# cooperative path used when a single prescribed equilibrium is scored
COOPERATIVE_PATH = {
    "PD": "grim",
    "BoS": "turn_taking_phase0",
    "Promo": "alternating",
    "Samaritan": "work_for_help",
    "Lemons": "trust",
}


def builtin_predicates(game: GameSpec | str) -> dict[str, PathPredicate]:
    return _builtin(get_game(game))


def cooperative_predicate(game: GameSpec | str) -> PathPredicate:
    g = get_game(game)
    return _builtin(g)[COOPERATIVE_PATH[g.name]]


def _actions(record) -> list[JointAction]:
    if hasattr(record, "joint_actions"):
        return record.joint_actions()
    return [tuple(a) for a in record]


def _check_window(window: tuple[int, int], T: int) -> range:
    lo, hi = window
    if hi < lo:
        raise ValueError(f"empty window {window}")
    if lo < 1 or hi > T:
        raise ValueError(f"window {window} is not inside rounds 1..{T}")
    return range(lo, hi + 1)


def follow_indicators(record, predicates: Mapping[str, PathPredicate] | Sequence[PathPredicate] | PathPredicate,
                      mode: str = "any") -> list[bool]:
    """Per-round on-path indicators over the whole record."""
    actions = _actions(record)
    if isinstance(predicates, PathPredicate):
        predicates = [predicates]
    elif isinstance(predicates, Mapping):
        predicates = list(predicates.values())
    if not predicates:
        raise ValueError("no predicates supplied")
    if mode == "cooperative" and len(predicates) != 1:
        raise ValueError("cooperative mode takes exactly one predicate")
    if mode not in ("any", "cooperative"):
        raise ValueError(f"unknown mode {mode!r}")
    traces = [p.trace(actions) for p in predicates]
    return [any(col) for col in zip(*traces)]


def equilibrium_follow_pct(record, predicates, window: tuple[int, int] = DEFAULT_WINDOW,
                           mode: str = "any") -> float:
    """Percentage of window rounds that lie on a credited path."""
    ind = follow_indicators(record, predicates, mode)
    rounds = _check_window(window, len(ind))
    return 100.0 * sum(ind[t - 1] for t in rounds) / len(rounds)


def any_nash_pct(record, game, window=DEFAULT_WINDOW) -> float:
    return equilibrium_follow_pct(record, builtin_predicates(game), window, "any")


def cooperative_pct(record, game, window=DEFAULT_WINDOW) -> float:
    return equilibrium_follow_pct(record, cooperative_predicate(game), window, "cooperative")


# ---------------------------------------------------------------------------
# truncated weak distance


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ProfileSpec:
    """Two finite-state strategies, one per role, on a game."""
    game: GameSpec
    strategies: tuple[StrategySpec, StrategySpec]

    def __post_init__(self):
        for i, s in enumerate(self.strategies):
            if s.own_actions != self.game.own_actions(i) or s.opp_actions != self.game.opp_actions(i):
                raise ValueError(f"strategy {s.label!r} does not fit role {i} of {self.game.name}")


def prefix_distributions(profile: ProfileSpec, k_max: int, budget: int = 2_000_000):
    """Yield, for t = 1..k_max, the law of the length-t play prefix as a dict."""
    s0, s1 = profile.strategies
    # prefix -> (probability, state of player 0, state of player 1)
    layer: dict[tuple, tuple[float, int, int]] = {(): (1.0, 0, 0)}
    for t in range(1, k_max + 1):
        nxt: dict[tuple, tuple[float, int, int]] = {}
        for prefix, (p, a_state, b_state) in layer.items():
            da = s0.dist_vector(a_state, t)
            db = s1.dist_vector(b_state, t)
            for i in np.flatnonzero(da):
                for j in np.flatnonzero(db):
                    q = p * float(da[i]) * float(db[j])
                    if q == 0.0:
                        continue
                    ph = (t - 1) % 2
                    key = prefix + ((s0.own_actions[i], s1.own_actions[j]),)
                    nxt[key] = (q, int(s0.trans[a_state, ph, i, j]), int(s1.trans[b_state, ph, j, i]))
        if len(nxt) > budget:
            raise BudgetExceeded(f"{len(nxt)} prefixes at t={t} exceed the budget of {budget}")
        layer = nxt
        yield {k: v[0] for k, v in layer.items()}


def total_variation(mu: Mapping, nu: Mapping) -> float:
    """sup over events of |mu(E) - nu(E)| for finitely supported laws."""
    keys = set(mu) | set(nu)
    pos = sum(max(mu.get(k, 0.0) - nu.get(k, 0.0), 0.0) for k in keys)
    neg = sum(max(nu.get(k, 0.0) - mu.get(k, 0.0), 0.0) for k in keys)
    return max(pos, neg)


def truncated_weak_distance(mu_spec: ProfileSpec, nu_spec: ProfileSpec, k_max: int,
                            budget: int = 2_000_000) -> tuple[float, float]:
    """sum_{t<=k_max} 2^-t TV(prefix_t(mu), prefix_t(nu)) and its tail bound 2^-k_max."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if mu_spec.game.actions != nu_spec.game.actions:
        raise ValueError("profiles are on different games")
    total = 0.0
    for t, (m, n) in enumerate(zip(prefix_distributions(mu_spec, k_max, budget),
                                   prefix_distributions(nu_spec, k_max, budget)), start=1):
        total += 2.0 ** -t * total_variation(m, n)
    return total, 2.0 ** -k_max


# ---------------------------------------------------------------------------
# stage-Nash trace


def stage_nash_trace(record, eps: float = 0.0) -> list[bool | None]:
    """Per-round stage eps-Nash check of the logged mixed actions; None where
    a player's mixed action was not recorded."""
    game = record.config.game_spec
    out: list[bool | None] = []
    for r in record.rounds:
        mixed = [p.mixed_action for p in r.players]
        if any(m is None for m in mixed):
            out.append(None)
        else:
            out.append(is_stage_epsilon_nash(game, mixed, eps))
    return out


# ---------------------------------------------------------------------------
# KL state-frequency diagnostic


def bernoulli_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q); zeros of q under the support of p are floored at the
    likelihood clip so the divergence stays finite."""
    mask = p > 0
    if np.any(q[mask] == 0.0):
        q = np.where(mask & (q == 0.0), PROB_CLIP, q)
        q = q / q.sum()
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass
class KLEntry:
    label: str
    average: float
    per_state: dict
    below_threshold: bool
    notes: list[str]


def _differs_on_reachable_state(f: StrategySpec, g: StrategySpec) -> bool:
    """True if some jointly reachable (f state, g state, phase) gives different laws."""
    seen, stack = set(), [(0, 0, 0)]
    while stack:
        sf, sg, ph = node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if not np.allclose(f.probs[sf, ph], g.probs[sg, ph], rtol=0, atol=1e-15):
            return True
        for i in range(len(f.own_actions)):
            for j in range(len(f.opp_actions)):
                stack.append((int(f.trans[sf, ph, i, j]), int(g.trans[sg, ph, i, j]), 1 - ph))
    return False


def _suffix_key(h: Sequence[JointAction], kappa: int) -> tuple:
    return tuple(h[-kappa:]) if kappa > 0 else ()


def kl_state_report(true_strat: StrategySpec, alt_strats: Sequence[StrategySpec], record,
                    kappa: int | None = None, player: int = 1, kappa_min: float = 0.0) -> dict[str, KLEntry]:
    """Average on-path KL between the true strategy of ``player`` and each
    alternative, weighted by empirical state frequencies of the trace.

    States are (own-view suffix of length ``kappa``, round parity) when
    ``kappa`` is given, else the pair of automaton state labels and parity.
    """
    game = record.config.game_spec
    own_view = [game.to_own_view(player, a) for a in record.joint_actions()]
    T = len(own_view)
    out = {}
    for g in alt_strats:
        sf = sg = 0
        counts: dict = defaultdict(int)
        kl_at: dict = {}
        for t in range(1, T + 1):
            ph = (t - 1) % 2
            if kappa is None:
                key = (true_strat.state_labels[sf], g.state_labels[sg], "odd" if ph == 0 else "even")
            else:
                key = (_suffix_key(own_view[: t - 1], kappa), "odd" if ph == 0 else "even")
            counts[key] += 1
            if key not in kl_at:
                kl_at[key] = bernoulli_kl(true_strat.probs[sf, ph], g.probs[sg, ph])
            i, j = true_strat.index_pair(own_view[t - 1])
            sf = int(true_strat.trans[sf, ph, i, j])
            sg = int(g.trans[sg, ph, i, j])
        per_state = {k: {"freq": c / T, "kl": kl_at[k]} for k, c in counts.items()}
        avg = sum(v["freq"] * v["kl"] for v in per_state.values())
        notes = []
        if avg == 0.0 and g is not true_strat and _differs_on_reachable_state(true_strat, g):
            notes.append("unvisited-state: the laws differ only at states the trace never visited")
        below = avg < kappa_min if kappa_min > 0 else avg == 0.0 and bool(notes)
        if below and kappa_min > 0:
            notes.append(f"separation below kappa_min={kappa_min}")
        out[g.label] = KLEntry(g.label, avg, per_state, below, notes)
    return out


# ---------------------------------------------------------------------------
# concentration traces and summaries


def dt_and_delta_trace(record) -> dict[str, list[list[float | None]]]:
    """Per-player per-round collision complement D and (when logged) delta."""
    D = [[r.players[i].collision for r in record.rounds] for i in range(2)]
    delta = [[r.players[i].delta for r in record.rounds] for i in range(2)]
    out = {"D": D}
    if any(x is not None for row in delta for x in row):
        out["delta"] = delta
    return out


def summarise(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": math.nan, "n": 0}
    return {"mean": float(arr.mean()), "n": int(arr.size)}


def summary_csv(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.4f}"
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return "" if v is None else v
