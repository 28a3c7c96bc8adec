"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` or through pytest,
where the lines are repeated in the terminal summary.
"""
from __future__ import annotations

import sys
import tempfile
import time
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from exact_gap import MENU, Harness, all_histories, check, discount_weights, normalised_pd  # noqa: E402

from psbr.cli import run_experiment  # noqa: E402
from psbr.engine import MatchConfig, run_match, run_suite  # noqa: E402
from psbr.games import BUILTIN_GAMES, PD, is_stage_epsilon_nash, point_mass  # noqa: E402
from psbr.metrics import (  # noqa: E402
    ProfileSpec, any_nash_pct, cooperative_pct, equilibrium_follow_pct, builtin_predicates,
    stage_nash_trace, truncated_weak_distance,
)
from psbr.planners import bellman_operator, exact_best_response  # noqa: E402
from psbr.presets import GAME_ORDER, PRESETS, with_overrides  # noqa: E402
from psbr.strategies import menu_for, strategy_by_label  # noqa: E402

RESULTS: dict[int, str] = {}


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

def test_criterion_1_sampled_best_response_gap():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    harness = Harness([MENU["allc"], MENU["alld"], MENU["tft"]], normalised_pd(),
                      discount_weights(Fraction(9, 10), 3))
    violations, checks, min_slack = 0, 0, None
    for _ in range(200):
        raw = [int(x) for x in rng.integers(0, 1000, size=3)]
        if not any(raw):
            raw[0] = 1
        mu = [Fraction(x, sum(raw)) for x in raw]
        for h in all_histories(3):
            if not any(mu[k] for k in harness.consistent(h)):
                continue
            sampled, best, d = check(harness, mu, h)
            checks += 1
            slack = sampled - (best - d)
            violations += slack < 0
            min_slack = slack if min_slack is None else min(min_slack, slack)
    elapsed = time.perf_counter() - start
    report(1, "sampled-best-response gap", violations == 0 and elapsed < 5.0,
           f"{violations} violations in {checks} exact checks over 200 beliefs, "
           f"min slack {float(min_slack):.4g}, {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------

def _grim_oracle(gamma):
    u = {("J", "J"): 3.0, ("J", "F"): -5.0, ("F", "J"): 5.0, ("F", "F"): 0.0}
    coop = pun = 0.0
    while True:
        new_pun = max((1 - gamma) * u[(a, "F")] + gamma * pun for a in "JF")
        new_coop = max((1 - gamma) * u[("J", "J")] + gamma * coop, (1 - gamma) * u[("F", "J")] + gamma * pun)
        if max(abs(new_coop - coop), abs(new_pun - pun)) <= 1e-14:
            return new_coop, new_pun
        coop, pun = new_coop, new_pun


def test_criterion_2_value_iteration():
    start = time.perf_counter()
    S = lambda label: strategy_by_label("PD", 1, label)
    alld = exact_best_response(PD, 0, S("alld"), 0.95)
    ok_alld = set(alld.policy.values()) == {"F"} and all(v == 0.0 for v in alld.raw_values.values())
    allc = exact_best_response(PD, 0, S("allc"), 0.95)
    err_allc = max(abs(v - 5.0) for v in allc.raw_values.values())
    ok_allc = set(allc.policy.values()) == {"F"} and err_allc <= 1e-8
    grim = exact_best_response(PD, 0, S("grim_trigger"), 0.95)
    coop, pun = _grim_oracle(0.95)
    err_grim = max(abs(grim.raw_values["normal"] - coop), abs(grim.raw_values["triggered"] - pun))
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        opp = S(menu_for("PD", 1)[k % 8].label)
        v, w = rng.normal(size=(2, opp.n_states, 2)) * 10
        ratio = np.max(np.abs(bellman_operator(PD, 0, opp, 0.95, v) - bellman_operator(PD, 0, opp, 0.95, w)))
        worst = max(worst, ratio / np.max(np.abs(v - w)))
    elapsed = time.perf_counter() - start
    ok = ok_alld and ok_allc and err_grim <= 1e-8 and worst <= 0.95 + 1e-12 and elapsed < 10
    report(2, "value iteration", ok,
           f"alld exact={ok_alld}, allc err={err_allc:.1e}, grim err={err_grim:.1e}, "
           f"max contraction ratio={worst:.4f}, {elapsed:.2f}s")


# 3 -------------------------------------------------------------------------

def test_criterion_3_posterior_concentration():
    start = time.perf_counter()
    hits = 0
    for seed in range(100):
        rec = run_match(MatchConfig("BoS", agents=("base", "fixed"), fixed_labels=(None, "noisy_insist_j"),
                                    T=200, seed=seed))
        last = rec.rounds[-1].players[0]
        hits += last.weights["noisy_insist_j"] > 0.99 and last.collision < 0.02
    elapsed = time.perf_counter() - start
    report(3, "posterior concentration", hits >= 95 and elapsed < 60,
           f"{hits}/100 traces concentrated at t=200, {elapsed:.1f}s")


# 4 -------------------------------------------------------------------------

def test_criterion_4_scot_lock_in():
    held = 0
    for seed in range(20):
        rec = run_match(MatchConfig("PD", agents=("scot", "scot"), T=200, seed=seed))
        held += all(stage_nash_trace(rec)[160:180])
    report(4, "deterministic SCoT stage-Nash lock-in", held == 20, f"{held}/20 trials in stage Nash over 161-180")


# 5, 6 ----------------------------------------------------------------------

def _psbr_suite(preset_name):
    preset = with_overrides(PRESETS[preset_name])
    configs = [c for c in preset.match_configs() if c.agents[0] == "psbr"]
    recs = run_suite(configs, preset.trials, preset.seed)
    by_game = {g: [r for r in recs if r.config.game == g] for g in GAME_ORDER}
    return preset, by_game


def test_criterion_5_collusive_prior_cooperation():
    start = time.perf_counter()
    preset, by_game = _psbr_suite("exp2")
    rates = {g: float(np.mean([cooperative_pct(r, g, preset.window) for r in rs])) for g, rs in by_game.items()}
    elapsed = time.perf_counter() - start
    ok = all(v >= 90.0 for v in rates.values()) and elapsed < 600
    report(5, "collusive-prior PS-BR cooperation", ok,
           ", ".join(f"{g} {v:.2f}%" for g, v in rates.items()) + f"; threshold 90%, {elapsed:.0f}s")


def test_criterion_6_unknown_payoff_cooperation():
    start = time.perf_counter()
    preset, by_game = _psbr_suite("exp3-coop")
    parts, ok = [], True
    for g, rs in by_game.items():
        rate = float(np.mean([cooperative_pct(r, g, preset.window) for r in rs]))
        below = np.mean([all(p.delta < 0.1 for p in r.rounds[-1].players) for r in rs])
        ok &= rate >= 70.0 and below >= 0.8
        parts.append(f"{g} {rate:.2f}% delta<0.1 in {100 * below:.0f}%")
    elapsed = time.perf_counter() - start
    report(6, "unknown-payoff PS-BR cooperation", ok,
           ", ".join(parts) + f"; thresholds 70% and 80%, {elapsed:.0f}s")


# 7 -------------------------------------------------------------------------

def test_criterion_7_metric_oracles():
    bos = BUILTIN_GAMES["BoS"]

    def prof(game, a, b):
        return ProfileSpec(game, (strategy_by_label(game.name, 0, a), strategy_by_label(game.name, 1, b)))

    same = truncated_weak_distance(prof(bos, "mlur", "wsls_bos"), prof(bos, "mlur", "wsls_bos"), 6)[0]
    first = truncated_weak_distance(prof(PD, "allc", "allc"), prof(PD, "alld", "alld"), 6)[0]
    three = truncated_weak_distance(prof(bos, "insist_j", "insist_j"),
                                    prof(bos, "alternate_phase0", "alternate_phase0"), 3)[0]
    ok_wd = abs(same) <= 1e-12 and first >= 0.5 - 1e-12 and abs(three - 0.375) <= 1e-12

    # hand-built traces with hand counts over rounds 161-180
    turn = [("J", "J") if t % 2 else ("F", "F") for t in range(1, 201)]
    broken = list(turn)
    for t in (161, 165, 170, 178, 180):
        broken[t - 1] = ("J", "F")
    grim = [("J", "J")] * 170 + [("F", "J")] + [("F", "F")] * 29
    promo = [("P", "R") if t % 2 else ("R", "P") for t in range(1, 201)]
    promo[164] = ("P", "P")                       # deviation at round 165
    promo[165] = promo[166] = ("Z", "Z")          # punishment at 166-167
    promo[167] = ("R", "P")                       # back on path from round 168
    cases = [
        (cooperative_pct(broken, "BoS"), 75.0),
        (any_nash_pct(broken, "BoS"), 75.0),
        (cooperative_pct(grim, "PD"), 100.0),
        (any_nash_pct(grim, "PD"), 100.0),
        (cooperative_pct(promo, "Promo"), 100.0),
        (equilibrium_follow_pct(grim, builtin_predicates("PD")["stage_nash"], mode="cooperative"), 45.0),
    ]
    ok_follow = all(got == want for got, want in cases)

    mismatches = 0
    for game in BUILTIN_GAMES.values():
        for a0, a1 in product(*game.actions):
            u0, u1 = game.payoff[(a0, a1)]
            brute = all(game.payoff[(b, a1)][0] <= u0 for b in game.actions[0]) and all(
                game.payoff[(a0, b)][1] <= u1 for b in game.actions[1])
            got = is_stage_epsilon_nash(game, (point_mass(a0, game.actions[0]), point_mass(a1, game.actions[1])), 0)
            mismatches += got != brute
    ok = ok_wd and ok_follow and mismatches == 0
    report(7, "metric oracles", ok,
           f"weak distance (0, {first:.3f}, {three:.12f}); follow cases "
           f"{sum(g == w for g, w in cases)}/{len(cases)}; stage-Nash mismatches {mismatches}")


# 8 -------------------------------------------------------------------------

def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix in (".jsonl", ".csv")}


def test_criterion_8_determinism():
    start = time.perf_counter()
    outcomes = []
    for name in ("exp2", "exp3-any"):
        preset = with_overrides(PRESETS[name], trials=2, seed=11)
        with tempfile.TemporaryDirectory() as tmp:
            trees = []
            for k, par in enumerate((1, 1, 4)):
                out = Path(tmp) / f"run{k}"
                run_experiment(preset, out, parallelism=par)
                trees.append(_tree(out))
            outcomes.append(trees[0] == trees[1] == trees[2] and len(trees[0]) == 32)
    elapsed = time.perf_counter() - start
    report(8, "determinism", all(outcomes),
           f"exp2 and exp3-any re-runs at parallelism 1, 1, 4 byte-identical: {outcomes}, {elapsed:.0f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
