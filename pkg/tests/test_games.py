from __future__ import annotations

from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psbr.games import (
    BOS, BUILTIN_GAMES, LEMONS, PD, PROMO, SAMARITAN,
    InvalidActionError, UnknownGameError, compute_delta_min, game_from_dict, get_game,
    is_stage_epsilon_nash, load_game, make_game, payoff, point_mass, stage_best_responses,
    suffix_kappa, update_state,
)


def test_payoff_lookup():
    assert payoff(PD, ("J", "J")) == (3, 3)
    assert payoff(BOS, ("J", "F")) == (0, 0)
    assert payoff(PROMO, ("P", "R")) == (4, -1)


@pytest.mark.parametrize("bad", [("X", "J"), ("J",), ("W", "H")])
def test_payoff_rejects_illegal(bad):
    g = SAMARITAN if bad == ("W", "H") else PD
    with pytest.raises(InvalidActionError):
        payoff(g, bad)


@pytest.mark.parametrize("g,expected", [(PD, 2), (BOS, 3), (PROMO, 1), (SAMARITAN, 1), (LEMONS, 1)])
def test_delta_min_by_scan(g, expected):
    scan = min(
        abs(Fraction(x[i]) - Fraction(y[i]))
        for i in range(2)
        for x in g.payoff.values()
        for y in g.payoff.values()
        if x[i] != y[i]
    )
    assert scan == g.delta_min == expected


def test_delta_min_mismatch_rejected():
    with pytest.raises(ValueError):
        make_game("bad", ("a", "b"), (("x",), ("y", "z")), [[(0, 0), (1, 2)]], delta_min=5)


def test_compute_delta_min_constant_table_rejected():
    with pytest.raises(ValueError):
        compute_delta_min({("x", "y"): (0, 0)})


def test_get_game_is_case_insensitive():
    assert get_game("pd") is PD
    with pytest.raises(UnknownGameError):
        get_game("harmony")


def test_game_from_yaml(tmp_path):
    p = tmp_path / "g.yaml"
    p.write_text(
        "name: Stag\nactions: [[S, H], [S, H]]\nmatrix:\n  - [[4, 4], [0, 3]]\n  - [[3, 0], [3, 3]]\n"
    )
    g = load_game(p)
    assert g.delta_min == 1
    assert payoff(g, ("H", "S")) == (3, 0)
    with pytest.raises(ValueError):
        game_from_dict({"name": "x"})


# suffix states

def test_suffix_examples():
    h = [("J", "J"), ("J", "F"), ("F", "F"), ("F", "J"), ("J", "J")]
    assert suffix_kappa([], 3) == ()
    assert suffix_kappa(h, 2) == (("F", "J"), ("J", "J"))
    assert suffix_kappa(h, 0) == ()
    a1, a2, a3 = ("J", "J"), ("J", "F"), ("F", "F")
    assert update_state((), a1, 2) == (a1,)
    assert update_state((a1, a2), a3, 2) == (a2, a3)
    assert update_state((a1,), a2, 3) == (a1, a2)


joint = st.tuples(st.sampled_from("JF"), st.sampled_from("JF"))


@given(st.lists(joint, max_size=12), st.integers(0, 5), joint)
def test_suffix_properties(h, kappa, a):
    s = suffix_kappa(h, kappa)
    assert len(s) == min(kappa, len(h))
    assert suffix_kappa(s, kappa) == s
    s2 = update_state(s, a, kappa)
    assert s2 == suffix_kappa(list(h) + [a], kappa)
    assert suffix_kappa(s2, kappa) == s2


# stage best responses

def test_stage_best_response_examples():
    assert stage_best_responses(PD, 0, {"J": 1.0, "F": 0.0}) == (frozenset({"F"}), 5)
    assert stage_best_responses(BOS, 0, {"J": 1.0, "F": 0.0}) == (frozenset({"J"}), 10)
    assert stage_best_responses(PD, 0, {"J": 0.5, "F": 0.5}) == (frozenset({"F"}), 2.5)


def test_stage_best_response_reports_ties():
    # BoS player 1 is indifferent when q(J) = 7/17
    q = {"J": 7 / 17, "F": 10 / 17}
    best, _ = stage_best_responses(BOS, "player1", q)
    assert best == frozenset({"J", "F"})


@given(st.sampled_from(sorted(BUILTIN_GAMES)), st.integers(0, 1),
       st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
       st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_best_response_affine_invariance(name, player, raw, a, b):
    g = BUILTIN_GAMES[name]
    opp = g.opp_actions(player)
    w = np.array(raw[: len(opp)]) / sum(raw[: len(opp)])
    q = dict(zip(opp, w.tolist()))
    rows = []
    for a0 in g.actions[0]:
        row = []
        for a1 in g.actions[1]:
            u = list(g.payoff[(a0, a1)])
            u[player] = u[player] * Fraction(a).limit_denominator(1000) + Fraction(b).limit_denominator(1000)
            row.append(tuple(u))
        rows.append(row)
    g2 = make_game(g.name + "x", g.roles, g.actions, rows)
    assert stage_best_responses(g, player, q)[0] == stage_best_responses(g2, player, q)[0]


def test_epsilon_nash_examples():
    F, J = point_mass("F", "JF"), point_mass("J", "JF")
    assert is_stage_epsilon_nash(PD, (F, F), 0)
    assert not is_stage_epsilon_nash(PD, (J, J), 0)
    assert is_stage_epsilon_nash(PD, (J, J), 2)
    with pytest.raises(ValueError):
        is_stage_epsilon_nash(PD, (J, J), -1)


def _brute_force_pure_nash(g):
    out = set()
    for a0, a1 in product(*g.actions):
        u0, u1 = g.payoff[(a0, a1)]
        if all(g.payoff[(b, a1)][0] <= u0 for b in g.actions[0]) and all(
            g.payoff[(a0, b)][1] <= u1 for b in g.actions[1]
        ):
            out.add((a0, a1))
    return out


def test_pure_nash_matches_brute_force(game):
    found = {
        (a0, a1)
        for a0, a1 in product(*game.actions)
        if is_stage_epsilon_nash(game, (point_mass(a0, game.actions[0]), point_mass(a1, game.actions[1])), 0)
    }
    assert found == _brute_force_pure_nash(game)
