"""Command-line front end: ``psbr run`` and ``psbr report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import ConfigError, MatchConfig, MatchRecord, RecordError, read_jsonl, run_match, suite_configs, write_jsonl
from .llm import ProviderConfig
from .metrics import (
    any_nash_pct,
    cooperative_pct,
    dt_and_delta_trace,
    kl_state_report,
    summary_csv,
)
from .presets import AGENT_COLUMNS, GAME_ORDER, PRESETS, ExperimentPreset, load_experiment, with_overrides
from .strategies import menu_for, strategy_by_label

log = logging.getLogger("psbr")

DELTA_TARGET = 0.1


# ---------------------------------------------------------------------------
# running


def _run_safe(args) -> tuple[MatchRecord | None, str | None]:
    cfg, provider = args
    try:
        return run_match(cfg, provider), None
    except Exception as e:  # recorded per trial, the suite carries on
        return None, f"{type(e).__name__}: {e}"


def run_experiment(preset: ExperimentPreset, out: Path, parallelism: int = 1,
                   provider: ProviderConfig | None = None) -> dict:
    """Run every (game, agent) self-play config and write records, tables and diagnostics."""
    base_configs = preset.match_configs()
    jobs = suite_configs(base_configs, preset.trials, preset.seed)
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_safe, [(c, provider) for c in jobs]))
    else:
        results = [_run_safe((c, provider)) for c in jobs]

    out.mkdir(parents=True, exist_ok=True)
    records: list[MatchRecord] = []
    failures = []
    for idx, (cfg, (rec, err)) in enumerate(zip(jobs, results)):
        trial = idx % preset.trials
        game, agent = cfg.game, cfg.agents[0]
        if err is not None:
            failures.append({"game": game, "agent": agent, "trial": trial, "error": err})
            log.warning("trial %s/%s/%d failed: %s", game, agent, trial, err)
            continue
        path = out / "records" / game / agent / f"trial_{trial:02d}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(rec, path)
        records.append(rec)

    rows = summary_rows(records, preset.metric, preset.window)
    (out / "summary.csv").write_text(table_csv(rows, preset.agents))
    (out / "summary_long.csv").write_text(long_csv(rows))
    diag = diagnostics(records, preset.window)
    (out / "diagnostics.json").write_text(json.dumps(diag, sort_keys=True, indent=1) + "\n")
    manifest = {"preset": preset.to_dict(), "failures": failures, "n_records": len(records)}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# tables


def record_metric(rec: MatchRecord, metric: str, window) -> float:
    game = rec.config.game
    if metric == "any":
        return any_nash_pct(rec, game, window)
    return cooperative_pct(rec, game, window)


def _game_key(g: str):
    return (GAME_ORDER.index(g) if g in GAME_ORDER else len(GAME_ORDER), g)


def summary_rows(records: Sequence[MatchRecord], metric: str, window) -> list[dict]:
    """One row per (game, agent): mean follow percentage and per-trial values.

    Trials are ordered by seed so the result does not depend on input order.
    """
    groups: dict[tuple[str, str], list[MatchRecord]] = defaultdict(list)
    for r in records:
        groups[(r.config.game, r.config.agents[0])].append(r)
    rows = []
    for (game, agent) in sorted(groups, key=lambda k: (_game_key(k[0]), k[1])):
        recs = sorted(groups[(game, agent)], key=lambda r: r.seed)
        vals = [record_metric(r, metric, window) for r in recs]
        rows.append({
            "game": game,
            "agent": AGENT_COLUMNS.get(agent, agent),
            "kind": agent,
            "metric": metric,
            "mean": float(np.mean(vals)),
            "trials": len(vals),
            "per_trial": vals,
        })
    return rows


def table_csv(rows: Sequence[dict], agents: Sequence[str] | None = None) -> str:
    """Wide table: games by agent columns, cells are mean follow percentages."""
    if agents is None:
        agents = sorted({r["kind"] for r in rows}, key=list(AGENT_COLUMNS).index)
    cols = [AGENT_COLUMNS.get(a, a) for a in agents]
    by_game: dict[str, dict] = {}
    for r in rows:
        by_game.setdefault(r["game"], {"game": r["game"]})[r["agent"]] = r["mean"]
    ordered = [by_game[g] for g in sorted(by_game, key=_game_key)]
    return summary_csv(ordered, ["game", *cols])


def long_csv(rows: Sequence[dict]) -> str:
    return summary_csv(rows, ["game", "agent", "metric", "mean", "trials", "per_trial"])


def render_table(rows: Sequence[dict], agents: Sequence[str] | None = None) -> str:
    text = table_csv(rows, agents).strip().splitlines()
    cells = [line.split(",") for line in text]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells)


# ---------------------------------------------------------------------------
# diagnostics


def _round6(x):
    return None if x is None else round(float(x), 6)


def diagnostics(records: Sequence[MatchRecord], window) -> dict:
    """Per (game, agent): mean collision-complement trace, delta trace and
    threshold rate (unknown payoffs), and the on-path KL separation report."""
    groups: dict[tuple[str, str], list[MatchRecord]] = defaultdict(list)
    for r in records:
        groups[(r.config.game, r.config.agents[0])].append(r)
    out: dict = {}
    for (game, agent), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r.seed)
        traces = [dt_and_delta_trace(r) for r in recs]
        D = np.array([[x for x in tr["D"][i]] for tr in traces for i in range(2)], dtype=float)
        entry = {
            "D_mean": [_round6(x) for x in D.mean(axis=0)],
            "D_final": [_round6(x) for x in D[:, -1]],
        }
        if all("delta" in tr for tr in traces):
            delta = np.array([tr["delta"][i] for tr in traces for i in range(2)], dtype=float)
            entry["delta_mean"] = [_round6(x) for x in delta.mean(axis=0)]
            entry["delta_final"] = [_round6(x) for x in delta[:, -1]]
            entry["delta_below_target_rate"] = _round6(np.mean(delta[:, -1] < DELTA_TARGET))
        entry["kl"] = _kl_summary(recs)
        out.setdefault(game, {})[agent] = entry
    return out


def _kl_summary(recs: Sequence[MatchRecord]) -> dict:
    """On-path KL from player 1's final MAP label for player 2 to every other
    label, averaged over trials."""
    sums: dict[str, list[float]] = defaultdict(list)
    unvisited: dict[str, int] = defaultdict(int)
    for r in recs:
        w = r.rounds[-1].players[0].weights
        if not w:
            continue
        game = r.config.game_spec
        top = max(w, key=lambda k: (w[k], k))
        true = strategy_by_label(game, 1, top)
        rep = kl_state_report(true, menu_for(game, 1), r, player=1)
        for label, e in rep.items():
            sums[label].append(e.average)
            unvisited[label] += any(n.startswith("unvisited-state") for n in e.notes)
    return {k: {"mean_kl": _round6(np.mean(v)), "unvisited_flags": unvisited[k]} for k, v in sorted(sums.items())}


# ---------------------------------------------------------------------------
# report


def load_records(root: Path) -> tuple[list[MatchRecord], int]:
    records, bad = [], 0
    for path in sorted(root.rglob("*.jsonl")):
        try:
            records.append(read_jsonl(path))
        except (RecordError, OSError) as e:
            bad += 1
            log.warning("skipping %s: %s", path, e)
    return records, bad


def report(root: Path, metric: str | None = None, window=None, out_csv: Path | None = None) -> tuple[str, int]:
    manifest_path = root / "manifest.json"
    agents = None
    if manifest_path.exists():
        preset = json.loads(manifest_path.read_text())["preset"]
        metric = metric or preset["metric"]
        window = window or tuple(preset["window"])
        agents = preset["agents"]
    records, bad = load_records(root)
    if metric is None:
        metric = "cooperative" if records and any(records[0].config.prior_labels) else "any"
    window = tuple(window or (161, 180))
    rows = summary_rows(records, metric, window)
    if agents is not None:
        present = {r["kind"] for r in rows}
        agents = [a for a in agents if a in present] or None
    csv_text = table_csv(rows, agents) if rows else "game\n"
    if out_csv is not None:
        out_csv.write_text(csv_text)
    text = render_table(rows, agents) if rows else "game"
    return text, bad


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psbr", description="Repeated-game PS-BR simulation laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment preset or config file")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", type=Path, help="YAML experiment file")
    r.add_argument("--seed", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--parallelism", type=int, default=1)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--strategy-inference", choices=["likelihood", "llm-label"])
    r.add_argument("--payoff-inference", choices=["likelihood"], default="likelihood")
    r.add_argument("--collusive-mode", action="store_true", help="tilt priors toward each game's cooperative label")
    r.add_argument("--llm-endpoint", help="chat-completions URL (or PSBR_LLM_ENDPOINT)")
    r.add_argument("--llm-model", help="model name (or PSBR_LLM_MODEL)")

    rp = sub.add_parser("report", help="recompute tables from a records directory")
    rp.add_argument("records", type=Path)
    rp.add_argument("--metric", choices=["any", "cooperative"])
    rp.add_argument("--window", type=int, nargs=2)
    rp.add_argument("--csv", type=Path)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _cmd_run(args) -> int:
    preset = PRESETS[args.preset] if args.preset else load_experiment(args.config)
    preset = with_overrides(
        preset,
        seed=args.seed,
        trials=args.trials,
        collusive=True if args.collusive_mode else None,
        inference=args.strategy_inference,
    )
    if args.parallelism < 1:
        raise ConfigError("--parallelism must be at least 1")
    provider = None
    if preset.match.get("inference") == "llm-label":
        provider = ProviderConfig.from_env(args.llm_endpoint, args.llm_model)
        if provider is None:
            log.warning("llm-label inference requested without an endpoint; using likelihood inference")
    manifest = run_experiment(preset, args.out, args.parallelism, provider)
    text, _ = report(args.out)
    print(text)
    if manifest["failures"]:
        print(f"{len(manifest['failures'])} trial(s) failed; see manifest.json", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    if not args.records.is_dir():
        raise ConfigError(f"{args.records} is not a directory")
    text, bad = report(args.records, args.metric, args.window, args.csv)
    print(text)
    if bad:
        print(f"skipped {bad} corrupt record(s)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
