"""Seeded self-play matches and suites.

Each round runs in two phases. First both players receive an
:class:`Observation` (round index, own-view public history, own rewards) and
decide. Then the joint action resolves, rewards are drawn and each player is
told only its own reward. Random draws come from independent streams keyed by
``(player, round, purpose)`` under a per-trial seed, so adding logging or
running trials in parallel never changes a draw.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .beliefs import DEFAULT_PRIOR_BOOST, collision_complement, new_posterior
from .games import GameSpec, History, JointAction, UnknownGameError, get_game
from .kernels import draw_index
from .llm import (
    ChatClient,
    LLMUnavailable,
    ProviderConfig,
    build_base_prompt,
    build_inference_prompt,
    build_scot_prompts,
    infer_label,
    request_action,
)
from .payoff_belief import new_offset_posterior, sigma_for_game
from .planners import PlannerConfig, base_decide, myopic_psbr_decide, psbr_decide, scot_decide, scot_respond
from .strategies import menu_for, strategy_by_label

log = logging.getLogger(__name__)

AGENT_KINDS = ("base", "scot", "myopic_psbr", "psbr", "fixed")
INFERENCE_MODES = ("likelihood", "llm-label")
PAYOFF_MODES = ("known", "gaussian-unknown")
RECORD_FORMAT = 1

# stream purposes
_DECIDE, _PAYOFF_SAMPLE, _NOISE, _LLM = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    game: str
    agents: tuple[str, str] = ("psbr", "psbr")
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    temperature: float = 1.0
    inference: str = "likelihood"
    prior_labels: tuple[str | None, str | None] = (None, None)
    prior_boost: float = DEFAULT_PRIOR_BOOST
    payoff_mode: str = "known"
    T: int = 200
    seed: int = 0
    fixed_labels: tuple[str | None, str | None] = (None, None)
    sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "prior_labels", tuple(self.prior_labels))
        object.__setattr__(self, "fixed_labels", tuple(self.fixed_labels))
        if isinstance(self.planner, dict):
            object.__setattr__(self, "planner", PlannerConfig(**self.planner))
        try:
            game = get_game(self.game)
        except UnknownGameError as e:
            raise ConfigError(str(e.args[0])) from None
        object.__setattr__(self, "game", game.name)
        if len(self.agents) != 2 or any(a not in AGENT_KINDS for a in self.agents):
            raise ConfigError(f"agents must be two of {AGENT_KINDS}, got {self.agents}")
        if self.inference not in INFERENCE_MODES:
            raise ConfigError(f"inference must be one of {INFERENCE_MODES}")
        if self.payoff_mode not in PAYOFF_MODES:
            raise ConfigError(f"payoff_mode must be one of {PAYOFF_MODES}")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        for i in range(2):
            opp_labels = [s.label for s in menu_for(game, 1 - i)]
            if self.prior_labels[i] is not None and self.prior_labels[i] not in opp_labels:
                raise ConfigError(f"prior label {self.prior_labels[i]!r} is not in the opponent menu {opp_labels}")
            if self.agents[i] == "fixed":
                own_labels = [s.label for s in menu_for(game, i)]
                if self.fixed_labels[i] not in own_labels:
                    raise ConfigError(f"fixed agent {i} needs a label from {own_labels}")

    @property
    def game_spec(self) -> GameSpec:
        return get_game(self.game)

    @property
    def planner_for_match(self) -> PlannerConfig:
        return replace(self.planner, T=self.T)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agents"] = list(self.agents)
        d["prior_labels"] = list(self.prior_labels)
        d["fixed_labels"] = list(self.fixed_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MatchConfig":
        d = dict(d)
        if "planner" in d and isinstance(d["planner"], dict):
            d["planner"] = PlannerConfig(**d["planner"])
        for key in ("agents", "prior_labels", "fixed_labels"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Observation:
    """Everything a player may condition on at the start of round ``t``."""
    t: int
    history: History
    rewards: tuple[float, ...]


@dataclass(frozen=True)
class PlayerLog:
    action: str
    mixed_action: dict[str, float] | None = None
    sampled_label: str | None = None
    chosen_label: str | None = None
    predicted: str | None = None
    candidate_values: dict[str, float] | None = None
    weights: dict[str, float] | None = None
    collision: float | None = None
    truth_mass: float | None = None
    delta: float | None = None
    source: str | None = None


@dataclass(frozen=True)
class RoundEntry:
    t: int
    actions: JointAction
    rewards: tuple[float, float]
    players: tuple[PlayerLog, PlayerLog]


@dataclass
class MatchRecord:
    config: MatchConfig
    rounds: list[RoundEntry]

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def T(self) -> int:
        return len(self.rounds)

    def joint_actions(self) -> list[JointAction]:
        return [r.actions for r in self.rounds]


# ---------------------------------------------------------------------------
# random streams


def stream(trial_seed: int, player: int, t: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=trial_seed, spawn_key=(player, t, purpose)))


def derive_seed(seed_base: int, config_index: int, trial: int) -> int:
    """Trial seed as a pure function of (seed_base, config index, trial)."""
    ss = np.random.SeedSequence(entropy=seed_base, spawn_key=(config_index, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# agents


class Agent:
    """Decision rule plus the incremental state it derives from observations."""

    kind = ""

    def __init__(self, game: GameSpec, player: int, cfg: MatchConfig, client: ChatClient | None = None):
        self.game = game
        self.player = player
        self.cfg = cfg
        self.client = client
        self.rounds_seen = 0
        self.opp_menu = menu_for(game, 1 - player)
        self.posterior = new_posterior(self.opp_menu, cfg.temperature, cfg.prior_labels[player], cfg.prior_boost)
        self.offsets = None
        if cfg.payoff_mode == "gaussian-unknown":
            self.offsets = new_offset_posterior(game, player, sigma=cfg.sigma)

    def decide(self, obs: Observation) -> PlayerLog:
        raise NotImplementedError

    def update(self, joint: JointAction, reward: float) -> None:
        """Absorb the round just played: own-view joint action and own reward."""
        self.posterior = self.posterior.observe((joint[1], joint[0]))
        if self.offsets is not None:
            self.offsets = self.offsets.update(joint, reward)
        self.rounds_seen += 1

    def _rng(self, obs: Observation, purpose: int) -> np.random.Generator:
        return stream(self.cfg.seed, self.player, obs.t, purpose)

    def _check(self, obs: Observation) -> None:
        if len(obs.history) != obs.t - 1 or self.rounds_seen != obs.t - 1:
            raise RuntimeError("agent state is out of sync with the observation")

    def _belief_fields(self) -> dict:
        w = self.posterior.weight_vector()
        out = {"weights": dict(zip(self.posterior.labels, w.tolist())), "collision": collision_complement(w)}
        if self.offsets is not None:
            out["truth_mass"], out["delta"] = self.offsets.truth_mass()
        return out

    def _sampled_payoffs(self, obs: Observation) -> np.ndarray | None:
        if self.offsets is None:
            return None
        return self.offsets.sample_mean_matrix(self._rng(obs, _PAYOFF_SAMPLE))

    def _mean_payoffs(self) -> np.ndarray | None:
        return None if self.offsets is None else self.offsets.mean_matrix()


class BaseAgent(Agent):
    kind = "base"

    def decide(self, obs: Observation) -> PlayerLog:
        self._check(obs)
        own = self.game.own_actions(self.player)
        rng = self._rng(obs, _DECIDE)
        if self.client is not None:
            try:
                tok = request_action(self.client, build_base_prompt(self.game, self.player, obs.history, obs.t),
                                     own, self._rng(obs, _LLM))
                if tok is not None:
                    return PlayerLog(tok, None, source="llm", **self._belief_fields())
            except LLMUnavailable:
                pass
        a = base_decide(self.game, self.player, rng)
        return PlayerLog(a, {x: 1.0 / len(own) for x in own}, source="uniform", **self._belief_fields())


class ScotAgent(Agent):
    kind = "scot"

    def decide(self, obs: Observation) -> PlayerLog:
        self._check(obs)
        own = self.game.own_actions(self.player)
        payoffs = self._mean_payoffs()
        if self.client is not None:
            try:
                pred = self._llm_predict(obs)
                if pred is not None:
                    a = scot_respond(self.game, self.player, pred, payoffs)
                    return PlayerLog(a, _point(a, own), predicted=pred, source="llm", **self._belief_fields())
            except LLMUnavailable:
                pass
        dec = scot_decide(self.game, self.player, self.posterior, payoffs)
        return PlayerLog(dec.action, _point(dec.action, own), predicted=dec.predicted,
                         source="likelihood", **self._belief_fields())

    def _llm_predict(self, obs: Observation) -> str | None:
        prompt = build_scot_prompts(self.game, self.player, obs.history, obs.t, menu=self.opp_menu,
                                    prior_label=self.cfg.prior_labels[self.player])
        return request_action(self.client, prompt, self.game.opp_actions(self.player), self._rng(obs, _LLM))


class MyopicAgent(Agent):
    kind = "myopic_psbr"

    def decide(self, obs: Observation) -> PlayerLog:
        self._check(obs)
        payoffs = self._sampled_payoffs(obs)
        dec = myopic_psbr_decide(self.game, self.player, obs.t, self.posterior, self._rng(obs, _DECIDE),
                                 payoffs, salt=self.cfg.planner.tie_break_salt)
        return PlayerLog(dec.action, dec.mixed_action, sampled_label=dec.sampled_label,
                         source="likelihood", **self._belief_fields())


class PSBRAgent(Agent):
    kind = "psbr"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.candidates = menu_for(self.game, self.player)
        self.cand_states = [0] * len(self.candidates)
        self.planner = self.cfg.planner_for_match

    def decide(self, obs: Observation) -> PlayerLog:
        self._check(obs)
        beliefs = self._belief_fields()
        payoffs = self._sampled_payoffs(obs)
        label, source = None, "likelihood"
        if self.client is not None:
            label, source = self._llm_label(obs)
        dec = psbr_decide(self.game, self.player, obs.history, obs.t, self.posterior, self.planner,
                          self._rng(obs, _DECIDE), payoffs, self.candidates, self.cand_states,
                          opponent_label=label)
        return PlayerLog(dec.action, dec.mixed_action, sampled_label=dec.sampled_label,
                         chosen_label=dec.chosen_label, candidate_values=dec.candidate_values,
                         source=source, **beliefs)

    def _llm_label(self, obs: Observation) -> tuple[str | None, str]:
        opp_view = tuple((b, a) for a, b in obs.history)
        prompt = build_inference_prompt(self.game, opp_view, self.opp_menu, obs.t,
                                        self.cfg.prior_labels[self.player], player=self.player)
        try:
            res = infer_label(self.client, prompt, self.posterior.labels, self._rng(obs, _LLM))
        except LLMUnavailable:
            return None, "fallback"
        return res.label, "llm-fallback-label" if res.fallback else "llm"

    def update(self, joint: JointAction, reward: float) -> None:
        t = self.rounds_seen + 1
        self.cand_states = [s.step(st, t, joint) for s, st in zip(self.candidates, self.cand_states)]
        super().update(joint, reward)


class FixedAgent(Agent):
    """Plays one menu strategy; useful for debugging and as a test opponent."""
    kind = "fixed"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.strategy = strategy_by_label(self.game, self.player, self.cfg.fixed_labels[self.player])
        self.state = 0

    def decide(self, obs: Observation) -> PlayerLog:
        self._check(obs)
        dist = self.strategy.dist_vector(self.state, obs.t)
        own = self.strategy.own_actions
        a = own[draw_index(dist, self._rng(obs, _DECIDE).random())]
        return PlayerLog(a, {x: float(p) for x, p in zip(own, dist)}, chosen_label=self.strategy.label,
                         source="fixed", **self._belief_fields())

    def update(self, joint: JointAction, reward: float) -> None:
        self.state = self.strategy.step(self.state, self.rounds_seen + 1, joint)
        super().update(joint, reward)


_AGENTS = {cls.kind: cls for cls in (BaseAgent, ScotAgent, MyopicAgent, PSBRAgent, FixedAgent)}


def _point(a: str, actions: Sequence[str]) -> dict[str, float]:
    return {x: (1.0 if x == a else 0.0) for x in actions}


def make_agent(game: GameSpec, player: int, cfg: MatchConfig, client: ChatClient | None = None) -> Agent:
    return _AGENTS[cfg.agents[player]](game, player, cfg, client)


# ---------------------------------------------------------------------------
# matches and suites


def run_match(cfg: MatchConfig, provider: ProviderConfig | None = None,
              agents: Sequence[Agent] | None = None) -> MatchRecord:
    """Play ``cfg.T`` rounds of self-play and log every round.

    In llm-label mode without a provider the agents use likelihood inference.
    """
    game = cfg.game_spec
    client = None
    if cfg.inference == "llm-label" and provider is not None:
        client = ChatClient(provider)
    elif cfg.inference == "llm-label":
        log.info("no LLM provider configured; using likelihood inference")
    try:
        if agents is None:
            agents = [make_agent(game, i, cfg, client) for i in range(2)]
        return _play(game, cfg, agents)
    finally:
        if client is not None:
            client.close()


def _play(game: GameSpec, cfg: MatchConfig, agents: Sequence[Agent]) -> MatchRecord:
    noisy = cfg.payoff_mode == "gaussian-unknown"
    sigma = cfg.sigma if cfg.sigma is not None else sigma_for_game(game)
    means = (game._matrices[0], game._matrices[1])
    public: list[JointAction] = []
    own_rewards: list[list[float]] = [[], []]
    rounds = []
    for t in range(1, cfg.T + 1):
        # decision phase: both observations are fixed before either player acts
        obs = [
            Observation(t, tuple(game.to_own_view(i, a) for a in public), tuple(own_rewards[i]))
            for i in range(2)
        ]
        logs = [agents[i].decide(obs[i]) for i in range(2)]
        joint = (logs[0].action, logs[1].action)
        r_idx = game.actions[0].index(joint[0]), game.actions[1].index(joint[1])
        rewards = []
        for i in range(2):
            r = float(means[i][r_idx])
            if noisy:
                r += sigma * float(stream(cfg.seed, i, t, _NOISE).standard_normal())
            rewards.append(r)
        # resolution phase: each player learns the joint action and its own reward only
        for i in range(2):
            agents[i].update(game.to_own_view(i, joint), rewards[i])
            own_rewards[i].append(rewards[i])
        public.append(joint)
        rounds.append(RoundEntry(t, joint, (rewards[0], rewards[1]), (logs[0], logs[1])))
    return MatchRecord(cfg, rounds)


def _run_one(args) -> MatchRecord:
    cfg, provider = args
    return run_match(cfg, provider)


def suite_configs(configs: Sequence[MatchConfig], trials_per_config: int, seed_base: int) -> list[MatchConfig]:
    if trials_per_config < 1:
        raise ConfigError("trials_per_config must be at least 1")
    return [replace(c, seed=derive_seed(seed_base, ci, k))
            for ci, c in enumerate(configs) for k in range(trials_per_config)]


def run_suite(configs: Sequence[MatchConfig], trials_per_config: int, seed_base: int,
              parallelism: int = 1, provider: ProviderConfig | None = None) -> list[MatchRecord]:
    """Run every config ``trials_per_config`` times with derived seeds.

    Output order is config-major, trial-minor, whatever the parallelism.
    """
    jobs = suite_configs(configs, trials_per_config, seed_base)
    if not jobs:
        return []
    if parallelism <= 1:
        return [run_match(c, provider) for c in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_one, [(c, provider) for c in jobs]))


# ---------------------------------------------------------------------------
# serialisation


def record_lines(rec: MatchRecord) -> Iterable[str]:
    yield json.dumps({"type": "header", "format": RECORD_FORMAT, "config": rec.config.to_dict(),
                      "seed": rec.seed, "rounds": rec.T}, sort_keys=True)
    for r in rec.rounds:
        yield json.dumps({
            "type": "round",
            "t": r.t,
            "actions": list(r.actions),
            "rewards": list(r.rewards),
            "players": [asdict(p) for p in r.players],
        }, sort_keys=True)


def record_to_jsonl(rec: MatchRecord) -> str:
    return "".join(line + "\n" for line in record_lines(rec))


def write_jsonl(rec: MatchRecord, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(record_to_jsonl(rec))
    return path


class RecordError(ValueError):
    pass


def parse_jsonl(text: str) -> MatchRecord:
    try:
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        head, body = lines[0], lines[1:]
        if head.get("type") != "header":
            raise RecordError("first line is not a header")
        cfg = MatchConfig.from_dict(head["config"])
        rounds = []
        for d in body:
            players = [PlayerLog(**p) for p in d["players"]]
            rounds.append(RoundEntry(d["t"], tuple(d["actions"]), tuple(d["rewards"]), tuple(players)))
    except RecordError:
        raise
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise RecordError(f"corrupt record: {e}") from e
    if len(rounds) != head.get("rounds", len(rounds)):
        raise RecordError("record is truncated")
    return MatchRecord(cfg, rounds)


def read_jsonl(path: str | Path) -> MatchRecord:
    return parse_jsonl(Path(path).read_text())
