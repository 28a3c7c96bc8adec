"""Stage games, histories, suffix memory states and one-shot best responses.

A joint action is a pair of action labels. Inside agents and strategies the
pair is always in own-view order ``(self action, opponent action)``; a game's
payoff table is keyed in role order ``(role 0 action, role 1 action)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

JointAction = tuple[str, str]
History = tuple[JointAction, ...]
MemoryState = tuple[JointAction, ...]
MixedAction = Mapping[str, float]

BEST_RESPONSE_TIE_TOL = 1e-12


class InvalidActionError(ValueError):
    """Raised for an action label that is not legal for the role."""


class InvalidHistoryError(ValueError):
    """Raised when a history contains illegal entries."""


class UnknownGameError(KeyError):
    pass


@dataclass(frozen=True)
class GameSpec:
    name: str
    roles: tuple[str, str]
    actions: tuple[tuple[str, ...], tuple[str, ...]]
    payoff: Mapping[JointAction, tuple[Fraction, Fraction]]
    delta_min: Fraction
    equilibrium_paths: tuple[str, ...] = ()
    display_name: str = ""
    _matrices: tuple[np.ndarray, np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for a in product(*self.actions):
            if a not in self.payoff:
                raise ValueError(f"{self.name}: payoff missing for joint action {a}")
        if self.delta_min <= 0:
            raise ValueError(f"{self.name}: delta_min must be positive")
        mats = []
        for i in range(2):
            m = np.zeros((len(self.actions[0]), len(self.actions[1])))
            for r, a0 in enumerate(self.actions[0]):
                for c, a1 in enumerate(self.actions[1]):
                    m[r, c] = float(self.payoff[(a0, a1)][i])
            m.setflags(write=False)
            mats.append(m)
        object.__setattr__(self, "_matrices", tuple(mats))
        if not self.display_name:
            object.__setattr__(self, "display_name", self.name)

    def __hash__(self):
        return hash((self.name, self.actions))

    def role_index(self, role: str | int) -> int:
        if isinstance(role, int):
            if role not in (0, 1):
                raise ValueError(f"player index must be 0 or 1, got {role}")
            return role
        try:
            return self.roles.index(role)
        except ValueError:
            raise ValueError(f"{self.name} has no role {role!r}; roles are {self.roles}") from None

    def own_actions(self, player: int) -> tuple[str, ...]:
        return self.actions[player]

    def opp_actions(self, player: int) -> tuple[str, ...]:
        return self.actions[1 - player]

    def own_view_matrix(self, player: int) -> np.ndarray:
        """Player's payoffs indexed ``[own action, opponent action]``."""
        m = self._matrices[player]
        return m if player == 0 else m.T

    def to_role_order(self, player: int, own_view: JointAction) -> JointAction:
        return own_view if player == 0 else (own_view[1], own_view[0])

    def to_own_view(self, player: int, role_order: JointAction) -> JointAction:
        return role_order if player == 0 else (role_order[1], role_order[0])


def payoff(game: GameSpec, a: JointAction) -> tuple[Fraction, Fraction]:
    """Payoff pair for a role-ordered joint action."""
    a = tuple(a)
    if len(a) != 2 or a[0] not in game.actions[0] or a[1] not in game.actions[1]:
        raise InvalidActionError(f"{a!r} is not a legal joint action in {game.name}")
    return game.payoff[a]


def compute_delta_min(payoffs: Mapping[JointAction, Sequence], n_players: int = 2) -> Fraction:
    """Smallest nonzero gap between two payoff values of the same player."""
    best = None
    for i in range(n_players):
        vals = sorted({Fraction(v[i]) for v in payoffs.values()})
        for x, y in zip(vals, vals[1:]):
            gap = y - x
            if best is None or gap < best:
                best = gap
    if best is None:
        raise ValueError("payoff table has no two distinct values for any player")
    return best


def make_game(name, roles, actions, rows, delta_min=None, equilibrium_paths=(), display_name=""):
    """Build a :class:`GameSpec` from matrix rows of payoff pairs.

    ``rows[r][c]`` is the payoff pair when role 0 plays ``actions[0][r]`` and
    role 1 plays ``actions[1][c]``.
    """
    actions = (tuple(actions[0]), tuple(actions[1]))
    if len(rows) != len(actions[0]) or any(len(r) != len(actions[1]) for r in rows):
        raise ValueError(f"{name}: matrix shape does not match the action lists")
    table = {}
    for a0, row in zip(actions[0], rows):
        for a1, pair in zip(actions[1], row):
            table[(a0, a1)] = (Fraction(pair[0]), Fraction(pair[1]))
    derived = compute_delta_min(table)
    if delta_min is None:
        delta_min = derived
    elif Fraction(delta_min) != derived:
        raise ValueError(f"{name}: stated delta_min {delta_min} differs from derived {derived}")
    return GameSpec(
        name=name,
        roles=tuple(roles),
        actions=actions,
        payoff=table,
        delta_min=Fraction(delta_min),
        equilibrium_paths=tuple(equilibrium_paths),
        display_name=display_name or name,
    )


BOS = make_game(
    "BoS", ("player1", "player2"), (("J", "F"), ("J", "F")),
    [[(10, 7), (0, 0)], [(0, 0), (7, 10)]],
    equilibrium_paths=("stage_nash", "stick_j", "stick_f", "turn_taking_phase0", "turn_taking_phase1"),
    display_name="Battle of the Sexes",
)
PD = make_game(
    "PD", ("player1", "player2"), (("J", "F"), ("J", "F")),
    [[(3, 3), (-5, 5)], [(5, -5), (0, 0)]],
    equilibrium_paths=("stage_nash", "grim"),
    display_name="Prisoner's Dilemma",
)
PROMO = make_game(
    "Promo", ("player1", "player2"), (("R", "P", "Z"), ("R", "P", "Z")),
    [
        [(1, 1), (-1, 4), (-2, -2)],
        [(4, -1), (0, 0), (-2, -2)],
        [(-2, -2), (-2, -2), (-2, -2)],
    ],
    equilibrium_paths=("stage_nash", "alternating"),
    display_name="Promo",
)
SAMARITAN = make_game(
    "Samaritan", ("helper", "recipient"), (("H", "N"), ("W", "S")),
    [[(2, -1), (0, 0)], [(1, -2), (-1, -3)]],
    equilibrium_paths=("stage_nash", "work_for_help"),
    display_name="Samaritan's dilemma",
)
LEMONS = make_game(
    "Lemons", ("seller", "buyer"), (("HQ", "LQ"), ("B", "D")),
    [[(3, 3), (-1, 0)], [(4, -1), (0, 0)]],
    equilibrium_paths=("stage_nash", "trust"),
    display_name="Lemons",
)

BUILTIN_GAMES: dict[str, GameSpec] = {g.name: g for g in (BOS, PD, PROMO, SAMARITAN, LEMONS)}


def get_game(name: str | GameSpec) -> GameSpec:
    if isinstance(name, GameSpec):
        return name
    for key, g in BUILTIN_GAMES.items():
        if key.lower() == str(name).lower():
            return g
    raise UnknownGameError(f"unknown game {name!r}; built-ins are {sorted(BUILTIN_GAMES)}")


def game_from_dict(d: Mapping) -> GameSpec:
    """Build a game from a declarative mapping (as read from YAML/JSON).

    Keys: ``name``, ``roles`` (optional), ``actions`` (two lists), ``matrix``
    (rows of ``[u1, u2]`` pairs), ``delta_min`` (optional; derived if absent).
    """
    try:
        name = d["name"]
        actions = d["actions"]
        rows = d["matrix"]
    except KeyError as e:
        raise ValueError(f"game definition is missing key {e.args[0]!r}") from None
    return make_game(
        name,
        d.get("roles", ("player1", "player2")),
        actions,
        rows,
        delta_min=d.get("delta_min"),
        equilibrium_paths=d.get("equilibrium_paths", ()),
    )


def load_game(path: str | Path) -> GameSpec:
    import yaml

    with open(path) as fh:
        return game_from_dict(yaml.safe_load(fh))


# ---------------------------------------------------------------------------
# histories and suffix states


def check_history(game: GameSpec, player: int, h: Sequence[JointAction]) -> History:
    """Validate an own-view history for ``player`` and return it as a tuple."""
    own, opp = game.own_actions(player), game.opp_actions(player)
    out = []
    for k, a in enumerate(h):
        if len(a) != 2 or a[0] not in own or a[1] not in opp:
            raise InvalidHistoryError(f"round {k + 1}: {a!r} is not a legal own-view joint action")
        out.append((a[0], a[1]))
    return tuple(out)


def suffix_kappa(h: Sequence[JointAction], kappa: int) -> MemoryState:
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if kappa == 0:
        return ()
    return tuple(tuple(a) for a in h[-kappa:])


def update_state(s: MemoryState, a: JointAction, kappa: int) -> MemoryState:
    if len(s) > kappa:
        raise ValueError(f"state of length {len(s)} exceeds kappa={kappa}")
    return suffix_kappa(tuple(s) + (tuple(a),), kappa)


# ---------------------------------------------------------------------------
# stage best responses


def check_mixed(q: MixedAction, actions: Sequence[str], tol: float = 1e-12) -> dict[str, float]:
    extra = set(q) - set(actions)
    if extra:
        raise InvalidActionError(f"mixed action mentions unknown actions {sorted(extra)}")
    probs = {a: float(q.get(a, 0.0)) for a in actions}
    if any(p < 0 for p in probs.values()) or abs(sum(probs.values()) - 1.0) > tol:
        raise ValueError(f"not a probability distribution: {probs}")
    return probs


def expected_payoffs(game: GameSpec, player: int, q: MixedAction) -> dict[str, float]:
    """Expected stage payoff of each own action against opponent mix ``q``."""
    q = check_mixed(q, game.opp_actions(player))
    m = game.own_view_matrix(player)
    qv = np.array([q[b] for b in game.opp_actions(player)])
    return {a: float(m[r] @ qv) for r, a in enumerate(game.own_actions(player))}


def stage_best_responses(game: GameSpec, player: int | str, q: MixedAction) -> tuple[frozenset[str], float]:
    player = game.role_index(player)
    vals = expected_payoffs(game, player, q)
    best = max(vals.values())
    return frozenset(a for a, v in vals.items() if v >= best - BEST_RESPONSE_TIE_TOL), best


def is_stage_epsilon_nash(game: GameSpec, profile: Sequence[MixedAction], eps: float) -> bool:
    """True iff no player gains more than ``eps`` by a unilateral stage deviation.

    ``profile[i]`` is player i's mixed action over its own action labels.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    for i in range(2):
        own = check_mixed(profile[i], game.own_actions(i))
        vals = expected_payoffs(game, i, profile[1 - i])
        current = sum(own[a] * vals[a] for a in own)
        if max(vals.values()) - current > eps + BEST_RESPONSE_TIE_TOL:
            return False
    return True


def point_mass(action: str, actions: Sequence[str]) -> dict[str, float]:
    return {a: (1.0 if a == action else 0.0) for a in actions}
