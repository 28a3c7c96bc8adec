from __future__ import annotations

from fractions import Fraction

import numpy as np

from exact_gap import MENU, Harness, all_histories, check, discount_weights, normalised_pd


def _random_belief(rng, n):
    raw = [int(x) for x in rng.integers(0, 50, size=n)]
    if sum(raw) == 0:
        raw[0] = 1
    return [Fraction(x, sum(raw)) for x in raw]


def test_point_mass_has_no_gap():
    h = Harness([MENU["allc"], MENU["alld"], MENU["tft"]], normalised_pd(), discount_weights(Fraction(1, 2), 3))
    sampled, best, d = check(h, [Fraction(0), Fraction(0), Fraction(1)])
    assert d == 0 and sampled == best


def test_gap_is_attained_by_some_beliefs():
    # against (allc, tft) at 1/2 each the sampled plan can lose value, so the check is not vacuous
    h = Harness([MENU["allc"], MENU["tft"]], normalised_pd(), discount_weights(Fraction(9, 10), 3))
    sampled, best, d = check(h, [Fraction(1, 2), Fraction(1, 2)])
    assert sampled < best <= sampled + d


def test_gap_holds_on_random_beliefs_and_histories():
    rng = np.random.default_rng(0)
    names = list(MENU)
    u = normalised_pd()
    violations = 0
    for _ in range(60):
        pick = rng.choice(len(names), size=3, replace=False)
        lam = Fraction(int(rng.integers(1, 20)), 20)
        h = Harness([MENU[names[k]] for k in pick], u, discount_weights(lam, 3))
        mu = _random_belief(rng, 3)
        for hist in all_histories(3):
            if not any(mu[k] for k in h.consistent(hist)):
                continue
            sampled, best, d = check(h, mu, hist)
            violations += sampled < best - d
    assert violations == 0
