"""Experiment presets and the declarative experiment format they share with
user config files."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .engine import ConfigError, MatchConfig
from .games import BUILTIN_GAMES, UnknownGameError, get_game
from .metrics import DEFAULT_WINDOW

AGENT_COLUMNS = {"base": "Base", "scot": "SCoT", "myopic_psbr": "Myopic PS-BR", "psbr": "PS-BR", "fixed": "Fixed"}
GAME_ORDER = ("BoS", "PD", "Promo", "Samaritan", "Lemons")

# Collusive prior per game: (player 1's label for player 2, player 2's label for player 1).
# Each label is the menu strategy whose play, met by its best response, traces the
# game's cooperative path.
COLLUSIVE_PRIORS: dict[str, tuple[str, str]] = {
    "PD": ("grim_trigger", "grim_trigger"),
    "BoS": ("alternate_phase0", "alternate_phase0"),
    "Promo": ("mad1", "mad0"),
    "Samaritan": ("grim_shirk_after_nohelp", "grim_nohelp"),
    "Lemons": ("grim_boycott", "grim_hq_until_boycott"),
}

METRICS = ("any", "cooperative")


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    games: tuple[str, ...] = GAME_ORDER
    agents: tuple[str, ...] = ("base", "scot", "psbr")
    metric: str = "any"
    collusive: bool = False
    trials: int = 20
    seed: int = 0
    window: tuple[int, int] = DEFAULT_WINDOW
    match: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "games", tuple(get_game(g).name for g in self.games))
        except UnknownGameError as e:
            raise ConfigError(str(e.args[0])) from None
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "window", tuple(self.window))
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.collusive:
            missing = [g for g in self.games if g not in COLLUSIVE_PRIORS]
            if missing:
                raise ConfigError(f"no collusive prior defined for {missing}")
        for a in self.agents:
            if a not in AGENT_COLUMNS or a == "fixed":
                raise ConfigError(f"unsupported agent kind {a!r}")
        self.match_configs()  # validate eagerly

    def match_configs(self) -> list[MatchConfig]:
        """One self-play config per (game, agent), game-major."""
        out = []
        for g in self.games:
            for a in self.agents:
                d = dict(self.match)
                d.update(game=g, agents=(a, a))
                if self.collusive:
                    d["prior_labels"] = COLLUSIVE_PRIORS[g]
                out.append(MatchConfig.from_dict(d))
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "games": list(self.games),
            "agents": list(self.agents),
            "metric": self.metric,
            "collusive": self.collusive,
            "trials": self.trials,
            "seed": self.seed,
            "window": list(self.window),
            "match": dict(self.match),
        }


PRESETS: dict[str, ExperimentPreset] = {
    "exp1": ExperimentPreset("exp1", metric="any"),
    "exp2": ExperimentPreset("exp2", metric="cooperative", collusive=True),
    "exp3-any": ExperimentPreset("exp3-any", metric="any", match={"payoff_mode": "gaussian-unknown"}),
    "exp3-coop": ExperimentPreset("exp3-coop", metric="cooperative", collusive=True,
                                  match={"payoff_mode": "gaussian-unknown"}),
}


def preset_from_dict(d: Mapping) -> ExperimentPreset:
    d = dict(d)
    known = set(ExperimentPreset.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown experiment keys {sorted(unknown)}; allowed: {sorted(known)}")
    d.setdefault("name", "custom")
    return ExperimentPreset(**d)


def load_experiment(path: str | Path) -> ExperimentPreset:
    import yaml

    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return preset_from_dict(data)


def with_overrides(p: ExperimentPreset, **kw) -> ExperimentPreset:
    """Apply command-line overrides; ``None`` values leave a field untouched."""
    match = dict(p.match)
    for key in ("inference", "payoff_mode"):
        if kw.get(key) is not None:
            match[key] = kw.pop(key)
        else:
            kw.pop(key, None)
    fields = {k: v for k, v in kw.items() if v is not None}
    return replace(p, match=match, **fields)


def builtin_game_names() -> list[str]:
    return [g for g in GAME_ORDER if g in BUILTIN_GAMES]
