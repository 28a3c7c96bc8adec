"""Decision rules: rollout PS-BR, exact best response by value iteration,
myopic PS-BR, deterministic SCoT, and the uniform Base fallback."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .beliefs import LabelPosterior
from .games import GameSpec, JointAction
from .strategies import StrategySpec, menu_for, opponent_view


class PlannerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 1
    H: int = 20
    gamma: float = 0.95
    T: int = 200
    tie_break_salt: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise PlannerConfigError("K must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise PlannerConfigError("gamma must lie in (0, 1]")
        if self.T < 1:
            raise PlannerConfigError("T must be at least 1")
        if self.H < 0:
            raise PlannerConfigError("H must be nonnegative")

    def last_round(self, t: int) -> int:
        return min(self.T, t + self.H - 1) if self.H > 0 else self.T


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_tie_break(names: Sequence[str], t: int, salt: int) -> str:
    """Deterministic pick among tied names: lowest FNV-1a of ``name|t|salt``."""
    return min(names, key=lambda n: (fnv1a(f"{n}|{t}|{salt}"), n))


# ---------------------------------------------------------------------------
# rollouts


_STACK_CACHE: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}


def stack_tables(strategies: Sequence[StrategySpec]) -> tuple[np.ndarray, np.ndarray]:
    """Stack strategy tables along a leading axis, padding state counts."""
    key = tuple(id(s) for s in strategies)
    hit = _STACK_CACHE.get(key)
    if hit is not None:
        return hit
    n_s = max(s.n_states for s in strategies)
    n_a, n_b = strategies[0].trans.shape[2:]
    trans = np.zeros((len(strategies), n_s, 2, n_a, n_b), dtype=np.int64)
    probs = np.zeros((len(strategies), n_s, 2, n_a))
    for c, s in enumerate(strategies):
        trans[c, : s.n_states] = s.trans
        probs[c, : s.n_states] = s.probs
        # padded states are unreachable; give them a valid distribution anyway
        probs[c, s.n_states:, :, 0] = 1.0
    _STACK_CACHE[key] = (trans, probs)
    return trans, probs


def rollout_batch(candidates: Sequence[StrategySpec], cand_states: Sequence[int],
                  opp: StrategySpec, opp_state: int, payoff_model: np.ndarray,
                  t: int, cfg: PlannerConfig, rng: np.random.Generator) -> np.ndarray:
    """Rollout returns, shape (len(candidates), K), from round ``t`` to the horizon."""
    n_steps = cfg.last_round(t) - t + 1
    uniforms = rng.random((len(candidates), cfg.K, n_steps, 2))
    trans, probs = stack_tables(candidates)
    return kernels.rollout_values(
        trans, probs, np.asarray(cand_states, dtype=np.int64),
        opp.trans, opp.probs, int(opp_state),
        np.ascontiguousarray(payoff_model, dtype=float), int(t), float(cfg.gamma), uniforms,
    )


def rollout_value(game: GameSpec, player: int, self_strat: StrategySpec, opp_strat: StrategySpec,
                  own_h: Sequence[JointAction], t: int, cfg: PlannerConfig,
                  rng: np.random.Generator, payoff_model: np.ndarray | None = None) -> float:
    """One simulated discounted return for ``self_strat`` against ``opp_strat``."""
    if len(own_h) != t - 1:
        raise ValueError(f"round {t} needs a history of {t - 1} rounds")
    if payoff_model is None:
        payoff_model = game.own_view_matrix(player)
    one = PlannerConfig(K=1, H=cfg.H, gamma=cfg.gamma, T=cfg.T, tie_break_salt=cfg.tie_break_salt)
    out = rollout_batch([self_strat], [self_strat.state_after(own_h)], opp_strat,
                        opp_strat.state_after(opponent_view(own_h)), payoff_model, t, one, rng)
    return float(out[0, 0])


@dataclass(frozen=True)
class PSBRDecision:
    sampled_label: str
    chosen_label: str
    action: str
    candidate_values: dict[str, float]
    mixed_action: dict[str, float]


def psbr_decide(game: GameSpec, player: int, own_h: Sequence[JointAction], t: int,
                posterior: LabelPosterior, cfg: PlannerConfig, rng: np.random.Generator,
                payoff_model: np.ndarray | None = None,
                candidates: Sequence[StrategySpec] | None = None,
                candidate_states: Sequence[int] | None = None,
                opponent_label: str | None = None) -> PSBRDecision:
    """Sample an opponent label, roll out every own-menu candidate against it,
    and act from the best candidate.

    ``posterior`` must have absorbed exactly the ``t - 1`` observed rounds.
    ``candidate_states`` may carry each candidate's automaton state after
    ``own_h`` to avoid replaying the history. ``opponent_label`` replaces the
    posterior draw with an externally inferred label.
    """
    player = game.role_index(player)
    if candidates is None:
        candidates = menu_for(game, player)
    if not candidates:
        raise PlannerConfigError("PS-BR needs a nonempty candidate menu")
    if posterior.rounds_observed != t - 1:
        raise ValueError("posterior is out of sync with the decision round")
    if candidate_states is None:
        candidate_states = [s.state_after(own_h) for s in candidates]
    if payoff_model is None:
        payoff_model = game.own_view_matrix(player)

    if opponent_label is None:
        k = kernels.draw_index(posterior.weight_vector(), rng.random())
    else:
        k = posterior.labels.index(opponent_label)
    opp = posterior.menu[k]
    values = rollout_batch(candidates, candidate_states, opp, posterior.states[k], payoff_model, t, cfg, rng)
    means = values.mean(axis=1)
    best = means.max()
    tied = [c.label for c, v in zip(candidates, means) if v == best]
    chosen_label = hash_tie_break(tied, t, cfg.tie_break_salt)
    c = next(i for i, s in enumerate(candidates) if s.label == chosen_label)
    chosen = candidates[c]
    dist = chosen.dist_vector(candidate_states[c], t)
    action = chosen.own_actions[kernels.draw_index(dist, rng.random())]
    return PSBRDecision(
        sampled_label=opp.label,
        chosen_label=chosen_label,
        action=action,
        candidate_values={s.label: float(v) for s, v in zip(candidates, means)},
        mixed_action={a: float(p) for a, p in zip(chosen.own_actions, dist)},
    )


# ---------------------------------------------------------------------------
# exact best response on the opponent's finite state space


@dataclass
class ValueFunction:
    """Optimal values and a pure optimal policy over (opponent state, phase).

    ``values`` are on the [0, 1]-normalised payoff scale, ``raw_values`` on the
    game's payoff scale; both use the (1 - gamma) per-period normalisation.
    Keys are the opponent automaton's state labels (suffix states rewritten to
    the responder's own view), paired with ``"odd"``/``"even"`` when the
    opponent's behaviour depends on round parity.
    """
    values: dict
    raw_values: dict
    policy: dict
    residual: float
    iterations: int
    gamma: float
    value_array: np.ndarray = field(repr=False)
    raw_value_array: np.ndarray = field(repr=False)
    policy_array: np.ndarray = field(repr=False)
    keys: list = field(repr=False)

    @property
    def initial_value(self) -> float:
        return float(self.raw_value_array[0, 0])


def normalise_payoffs(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros_like(m, dtype=float)
    return (m - lo) / (hi - lo)


def _state_key(opp: StrategySpec, s: int):
    label = opp.state_labels[s]
    if isinstance(label, tuple):
        return opponent_view(label)
    return label


def exact_best_response(game: GameSpec, player, opp_strat: StrategySpec, gamma: float,
                        tol: float = 1e-10, max_iter: int = 1_000_000,
                        payoff_model: np.ndarray | None = None) -> ValueFunction:
    """Solve the responder's discounted MDP against a finite-state opponent."""
    player = game.role_index(player)
    if not 0.0 < gamma < 1.0:
        raise PlannerConfigError("value iteration needs 0 < gamma < 1")
    raw = np.ascontiguousarray(game.own_view_matrix(player) if payoff_model is None else payoff_model, dtype=float)
    norm = normalise_payoffs(raw)
    v0 = np.zeros((opp_strat.n_states, 2))
    # stopping at residual <= tol * (1 - gamma) also bounds the value error by tol
    stop = tol * (1.0 - gamma)
    v_norm, res, it = kernels.value_iteration(opp_strat.trans, opp_strat.probs, norm, gamma, stop, max_iter, v0)
    v_raw, _, _ = kernels.value_iteration(opp_strat.trans, opp_strat.probs, raw, gamma,
                                          stop * max(1.0, float(np.ptp(raw))), max_iter, v0)
    q = kernels.bellman_q(opp_strat.trans, opp_strat.probs, raw, gamma, v_raw)
    policy_arr = np.argmax(q, axis=2)
    own = game.own_actions(player)
    values, raw_values, policy, keys = {}, {}, {}, []
    for s in range(opp_strat.n_states):
        phases = (0, 1) if opp_strat.phase_dependent else (0,)
        for ph in phases:
            key = _state_key(opp_strat, s)
            if opp_strat.phase_dependent:
                key = (key, "odd" if ph == 0 else "even")
            keys.append(key)
            values[key] = float(v_norm[s, ph])
            raw_values[key] = float(v_raw[s, ph])
            policy[key] = own[int(policy_arr[s, ph])]
    return ValueFunction(values, raw_values, policy, float(res), int(it), gamma,
                         v_norm, v_raw, policy_arr, keys)


def bellman_operator(game: GameSpec, player, opp_strat: StrategySpec, gamma: float,
                     v: np.ndarray, normalised: bool = True) -> np.ndarray:
    player = game.role_index(player)
    m = game.own_view_matrix(player)
    m = normalise_payoffs(m) if normalised else np.ascontiguousarray(m, dtype=float)
    return kernels.bellman_apply(opp_strat.trans, opp_strat.probs, m, gamma, np.asarray(v, dtype=float))


# ---------------------------------------------------------------------------
# one-step rules


def _pure_best_responses(payoff_model: np.ndarray, q: np.ndarray) -> np.ndarray:
    vals = payoff_model @ q
    return np.flatnonzero(vals >= vals.max() - 1e-12)


@dataclass(frozen=True)
class MyopicDecision:
    sampled_label: str
    action: str
    mixed_action: dict[str, float]


def myopic_psbr_decide(game: GameSpec, player, t: int, posterior: LabelPosterior,
                       rng: np.random.Generator, payoff_model: np.ndarray | None = None,
                       salt: int = 0) -> MyopicDecision:
    """Sample one label and stage-best-respond to its next-round action law.

    ``mixed_action`` is the ex-ante law of the played action, i.e. the
    posterior-weighted mixture of the per-label best responses.
    """
    player = game.role_index(player)
    own = game.own_actions(player)
    m = game.own_view_matrix(player) if payoff_model is None else payoff_model

    def respond(k: int) -> int:
        s = posterior.menu[k]
        q = s.dist_vector(posterior.states[k], t)
        tied = [own[i] for i in _pure_best_responses(m, q)]
        return own.index(hash_tie_break(tied, t, salt))

    w = posterior.weight_vector()
    k = kernels.draw_index(w, rng.random())
    alpha = np.zeros(len(own))
    for j, wj in enumerate(w):
        if wj > 0:
            alpha[respond(j)] += wj
    return MyopicDecision(posterior.menu[k].label, own[respond(k)],
                          {a: float(p) for a, p in zip(own, alpha)})


@dataclass(frozen=True)
class ScotDecision:
    predicted: str
    action: str


def scot_decide(game: GameSpec, player, posterior: LabelPosterior,
                payoff_model: np.ndarray | None = None) -> ScotDecision:
    """MAP prediction of the opponent's next action, then a pure stage best
    response; both ties go to the lowest action index."""
    player = game.role_index(player)
    m = game.own_view_matrix(player) if payoff_model is None else payoff_model
    q = posterior.predictive()
    b = int(np.argmax(q))
    a = int(np.argmax(m[:, b]))
    return ScotDecision(game.opp_actions(player)[b], game.own_actions(player)[a])


def scot_respond(game: GameSpec, player, predicted: str, payoff_model: np.ndarray | None = None) -> str:
    player = game.role_index(player)
    m = game.own_view_matrix(player) if payoff_model is None else payoff_model
    b = game.opp_actions(player).index(predicted)
    return game.own_actions(player)[int(np.argmax(m[:, b]))]


def base_decide(game: GameSpec, player, rng: np.random.Generator) -> str:
    """Uniformly random legal action."""
    own = game.own_actions(game.role_index(player))
    return own[int(rng.integers(len(own)))]
