"""Known-noise, unknown-mean payoff learning over a finite offset grid.

Each player keeps an independent discrete posterior per joint action over
offsets ``k`` in a fixed grid; the candidate mean for joint action ``a`` is
``base[a] + k * sigma``. Under a product prior the posterior over full mean
matrices is the product of these marginals, so updates touch one entry and
matrix samples draw each entry independently.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .games import GameSpec, JointAction
from .kernels import draw_index

OFFSET_GRID = (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0)


def sigma_for_game(game: GameSpec) -> float:
    """Noise standard deviation: the game's minimal payoff gap."""
    return float(game.delta_min)


@dataclass(frozen=True)
class OffsetPosterior:
    own_actions: tuple[str, ...]
    opp_actions: tuple[str, ...]
    base: np.ndarray          # [own, opp] centring matrix
    sigma: float
    log_w: np.ndarray         # [own, opp, len(grid)] unnormalised log weights
    grid: tuple[float, ...] = OFFSET_GRID

    def _index(self, a: JointAction) -> tuple[int, int]:
        return self.own_actions.index(a[0]), self.opp_actions.index(a[1])

    def marginal(self, a: JointAction) -> np.ndarray:
        i, j = self._index(a)
        return _normalise(self.log_w[i, j])

    def marginals(self) -> np.ndarray:
        z = self.log_w - self.log_w.max(axis=2, keepdims=True)
        w = np.exp(z)
        return w / w.sum(axis=2, keepdims=True)

    def update(self, a: JointAction, r: float) -> "OffsetPosterior":
        i, j = self._index(a)
        means = self.base[i, j] + np.asarray(self.grid) * self.sigma
        lw = self.log_w.copy()
        lw[i, j] = lw[i, j] - (r - means) ** 2 / (2.0 * self.sigma ** 2)
        lw.setflags(write=False)
        return replace(self, log_w=lw)

    def sample_mean_matrix(self, rng: np.random.Generator) -> np.ndarray:
        """One draw of the full mean matrix; entries are independent."""
        m = self.marginals()
        grid = np.asarray(self.grid)
        out = np.empty_like(self.base, dtype=float)
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                out[i, j] = self.base[i, j] + grid[draw_index(m[i, j], rng.random())] * self.sigma
        return out

    def mean_matrix(self) -> np.ndarray:
        """Posterior expected mean payoff per joint action."""
        return self.base + (self.marginals() @ np.asarray(self.grid)) * self.sigma

    def argmax_offsets(self) -> np.ndarray:
        return np.asarray(self.grid)[np.argmax(self.log_w, axis=2)]

    def truth_mass(self) -> tuple[float, float]:
        """(posterior mass on the all-zero-offset matrix, one minus that mass)."""
        zero = self.grid.index(0.0)
        mass = float(np.prod(self.marginals()[:, :, zero]))
        return mass, 1.0 - mass


def _normalise(lw: np.ndarray) -> np.ndarray:
    w = np.exp(lw - lw.max())
    return w / w.sum()


def new_offset_posterior(game: GameSpec, player: int, sigma: float | None = None,
                         base: np.ndarray | None = None,
                         grid: Sequence[float] = OFFSET_GRID) -> OffsetPosterior:
    """Uniform prior over offsets for every joint action, centred on ``base``.

    ``base`` defaults to the player's true own-view mean matrix.
    """
    if sigma is None:
        sigma = sigma_for_game(game)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    grid = tuple(float(k) for k in grid)
    if 0.0 not in grid:
        raise ValueError("offset grid must contain 0")
    if base is None:
        base = game.own_view_matrix(player)
    base = np.array(base, dtype=float)
    base.setflags(write=False)
    lw = np.zeros(base.shape + (len(grid),))
    lw.setflags(write=False)
    return OffsetPosterior(game.own_actions(player), game.opp_actions(player), base, float(sigma), lw, grid)
