"""Time the compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the switch is read at import.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, time
import numpy as np
import psbr
from psbr import kernels
from psbr.engine import MatchConfig, run_match
from psbr.games import PD
from psbr.planners import exact_best_response, stack_tables
from psbr.strategies import menu_for, strategy_by_label

repeat = int(__import__("sys").argv[1])
cands = menu_for("PD", 0)
opp = strategy_by_label("PD", 1, "grim_trigger")
trans, probs = stack_tables(cands)
u = np.random.default_rng(0).random((len(cands), 16, 20, 2))
payoff = PD.own_view_matrix(0).astype(float)
s0 = np.zeros(len(cands), dtype=np.int64)

def rollout():
    kernels.rollout_values(trans, probs, s0, opp.trans, opp.probs, 0, payoff, 3, 0.95, u)

def vi():
    for s in menu_for("PD", 1):
        exact_best_response(PD, 0, s, 0.99)

def match():
    run_match(MatchConfig("PD", agents=("psbr", "psbr"), T=60, seed=1))

out = {"backend": psbr.backend()}
for name, fn in (("rollout_batch", rollout), ("value_iteration_menu", vi), ("psbr_match_T60", match)):
    t0 = time.perf_counter(); fn(); first = time.perf_counter() - t0
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); times.append(time.perf_counter() - t0)
    out[name] = {"first_call": first, "best": min(times)}
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("PSBR_DISABLE_NUMBA", None)
    if disable:
        env["PSBR_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'case':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}{'jit warmup':>12}")
    for case in ("rollout_batch", "value_iteration_menu", "psbr_match_T60"):
        a, b = fast[case]["best"], slow[case]["best"]
        print(f"{case:<22}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{b / a:>9.1f}x{fast[case]['first_call']:>11.2f}s")


if __name__ == "__main__":
    main()
