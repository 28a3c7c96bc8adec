"""Discrete posteriors over an opponent strategy menu.

Likelihoods are accumulated online in the log domain from the opponent-view
history; weights are a max-subtracted softmax at temperature ``tau`` (floored
at 1e-5) on top of an optional prior tilt toward one label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .games import JointAction
from .kernels import draw_index
from .strategies import StrategySpec

PROB_CLIP = 1e-6
MIN_TEMPERATURE = 1e-5
DEFAULT_PRIOR_BOOST = math.log(100.0)


def clipped_probability(dist: np.ndarray, observed: int) -> float:
    """Probability of the observed action with the likelihood clip applied.

    For two-action games the clip is applied to the probability of the first
    action, then complemented if the second action was observed; otherwise the
    observed action's own probability is clipped.
    """
    if dist.shape[0] == 2:
        p = min(max(float(dist[0]), PROB_CLIP), 1.0 - PROB_CLIP)
        return p if observed == 0 else 1.0 - p
    return min(max(float(dist[observed]), PROB_CLIP), 1.0 - PROB_CLIP)


def log_likelihood_increment(s: StrategySpec, u: int, opp_view_h: Sequence[JointAction], observed: str) -> float:
    """Log clipped probability that ``s`` plays ``observed`` at round ``u``.

    ``opp_view_h`` is the first ``u - 1`` rounds from the opponent's own view.
    """
    dist = np.asarray(list(s.action_distribution(u, opp_view_h).values()))
    return math.log(clipped_probability(dist, s.own_actions.index(observed)))


@dataclass(frozen=True)
class LabelPosterior:
    menu: tuple[StrategySpec, ...]
    log_likelihoods: tuple[float, ...]
    prior_log_weights: tuple[float, ...]
    temperature: float = 1.0
    states: tuple[int, ...] = ()
    rounds_observed: int = 0

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.menu)

    @property
    def tau(self) -> float:
        return max(self.temperature, MIN_TEMPERATURE)

    def weight_vector(self) -> np.ndarray:
        z = np.asarray(self.prior_log_weights) + np.asarray(self.log_likelihoods) / self.tau
        z = z - z.max()
        w = np.exp(z)
        return w / w.sum()

    def observe(self, opp_view_action: JointAction) -> "LabelPosterior":
        """Fold in one round, given as (opponent action, own action)."""
        u = self.rounds_observed + 1
        new_ll, new_states = [], []
        for s, ll, st in zip(self.menu, self.log_likelihoods, self.states):
            i, j = s.index_pair(opp_view_action)
            p = clipped_probability(s.dist_vector(st, u), i)
            new_ll.append(ll + math.log(p))
            new_states.append(int(s.trans[st, (u - 1) % 2, i, j]))
        return replace(self, log_likelihoods=tuple(new_ll), states=tuple(new_states), rounds_observed=u)

    def predictive(self) -> np.ndarray:
        """Posterior-predictive distribution of the opponent's next action."""
        t = self.rounds_observed + 1
        w = self.weight_vector()
        out = np.zeros(len(self.menu[0].own_actions))
        for wk, s, st in zip(w, self.menu, self.states):
            out += wk * s.dist_vector(st, t)
        return out


def new_posterior(
    menu: Sequence[StrategySpec],
    temperature: float = 1.0,
    prior_label: str | None = None,
    prior_boost: float = DEFAULT_PRIOR_BOOST,
) -> LabelPosterior:
    menu = tuple(menu)
    if not menu:
        raise ValueError("posterior needs a nonempty menu")
    prior = [0.0] * len(menu)
    if prior_label is not None:
        labels = [s.label for s in menu]
        if prior_label not in labels:
            raise ValueError(f"prior label {prior_label!r} not in menu {labels}")
        prior[labels.index(prior_label)] = prior_boost
    return LabelPosterior(menu, (0.0,) * len(menu), tuple(prior), temperature, (0,) * len(menu))


def posterior_from_history(menu, opp_view_h: Sequence[JointAction], **kw) -> LabelPosterior:
    p = new_posterior(menu, **kw)
    for a in opp_view_h:
        p = p.observe(a)
    return p


def posterior_weights(p: LabelPosterior) -> dict[str, float]:
    return dict(zip(p.labels, p.weight_vector().tolist()))


def sample_label(p: LabelPosterior, rng: np.random.Generator) -> str:
    return p.labels[draw_index(p.weight_vector(), rng.random())]


def collision_complement(weights) -> float:
    """Probability that two independent draws from ``weights`` differ."""
    if isinstance(weights, Mapping):
        weights = list(weights.values())
    w = np.asarray(weights, dtype=float)
    return float(1.0 - np.dot(w, w))


def map_label(p: LabelPosterior) -> str:
    return p.labels[int(np.argmax(p.weight_vector()))]
