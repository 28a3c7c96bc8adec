"""Optional chat-completions provider for label inference and the Base/SCoT
prompt protocols.

Nothing else in the package requires a provider: every caller treats
:class:`LLMUnavailable` as a signal to fall back to likelihood inference.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import httpx
import numpy as np

from .games import GameSpec, JointAction
from .strategies import StrategySpec

OUTPUT_RULE = "**Output only the label.**"
DEFAULT_MAX_RETRIES = 3


class LLMUnavailable(RuntimeError):
    """The provider could not be reached or returned an unusable response."""


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str
    model: str
    temperature: float = 1.0
    max_retries: int = DEFAULT_MAX_RETRIES
    timeout: float = 30.0
    api_key: str | None = None

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @classmethod
    def from_env(cls, endpoint: str | None = None, model: str | None = None, **kw) -> "ProviderConfig | None":
        """Build from arguments, falling back to ``PSBR_LLM_*`` variables.

        Returns None when no endpoint is configured.
        """
        endpoint = endpoint or os.environ.get("PSBR_LLM_ENDPOINT")
        if not endpoint:
            return None
        model = model or os.environ.get("PSBR_LLM_MODEL", "default")
        kw.setdefault("api_key", os.environ.get("PSBR_LLM_API_KEY"))
        return cls(endpoint=endpoint, model=model, **kw)


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str

    def messages(self) -> list[dict[str, str]]:
        out = []
        if self.system:
            out.append({"role": "system", "content": self.system})
        out.append({"role": "user", "content": self.user})
        return out


class ChatClient:
    """Minimal client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, provider: ProviderConfig, transport: httpx.BaseTransport | None = None):
        self.provider = provider
        headers = {"Authorization": f"Bearer {provider.api_key}"} if provider.api_key else {}
        self._http = httpx.Client(transport=transport, timeout=provider.timeout, headers=headers)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, prompt: PromptBundle, seed: int | None = None) -> str:
        payload = {
            "model": self.provider.model,
            "messages": prompt.messages(),
            "temperature": self.provider.temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        try:
            resp = self._http.post(self.provider.endpoint, json=payload)
            resp.raise_for_status()
            return str(resp.json()["choices"][0]["message"]["content"])
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as e:
            raise LLMUnavailable(f"chat completion failed: {e}") from e


# ---------------------------------------------------------------------------
# parsing


def parse_token(text: str, allowed: Sequence[str]) -> str | None:
    """Return the allowed token equal to ``text`` after trimming and case-folding."""
    key = text.strip().casefold()
    hits = [a for a in allowed if a.casefold() == key]
    return hits[0] if len(hits) == 1 else None


@dataclass(frozen=True)
class LabelInference:
    label: str
    attempts: int
    fallback: bool


def infer_label(client: ChatClient, prompt: PromptBundle, labels: Sequence[str],
                rng: np.random.Generator | None = None) -> LabelInference:
    """Ask for one label; retry on parse failure, then fall back to ``labels[0]``.

    Transport failures propagate as :class:`LLMUnavailable`.
    """
    labels = [s.label if isinstance(s, StrategySpec) else s for s in labels]
    if not labels:
        raise ValueError("label set is empty")
    attempts = 1 + client.provider.max_retries
    for k in range(1, attempts + 1):
        seed = None if rng is None else int(rng.integers(2**31))
        label = parse_token(client.complete(prompt, seed=seed), labels)
        if label is not None:
            return LabelInference(label, k, False)
    return LabelInference(labels[0], attempts, True)


def request_action(client: ChatClient, prompt: PromptBundle, tokens: Sequence[str],
                   rng: np.random.Generator | None = None) -> str | None:
    """Ask for one action token; None if no response parses."""
    for _ in range(1 + client.provider.max_retries):
        seed = None if rng is None else int(rng.integers(2**31))
        tok = parse_token(client.complete(prompt, seed=seed), tokens)
        if tok is not None:
            return tok
    return None


# ---------------------------------------------------------------------------
# prompt rendering


def rules_text(game: GameSpec, player: int) -> str:
    """Plain-language rules for ``player`` with the full payoff table."""
    own, opp = game.own_actions(player), game.opp_actions(player)
    lines = [
        f"You are playing a repeated game ({game.display_name}) with another player.",
        f"You are the {game.roles[player]}. Each round you choose one of {', '.join(own)} "
        f"and the other player chooses one of {', '.join(opp)}, simultaneously.",
        "Payoffs (yours, the other player's):",
    ]
    for a in own:
        for b in opp:
            pay = game.payoff[game.to_role_order(player, (a, b))]
            mine, theirs = (pay[0], pay[1]) if player == 0 else (pay[1], pay[0])
            lines.append(f"- you {a}, other {b}: ({mine}, {theirs})")
    return "\n".join(lines)


def _label_lines(menu: Sequence[StrategySpec]) -> list[str]:
    return [f"- {s.label}: {s.description}" for s in menu]


def _prior_line(prior_label: str | None) -> list[str]:
    return [f"Strongly expect Player A to play with strategy '{prior_label}'."] if prior_label else []


def build_inference_prompt(game: GameSpec, opp_view_h: Sequence[JointAction], menu: Sequence[StrategySpec],
                           t: int, prior_label: str | None = None, player: int = 0) -> PromptBundle:
    """Label-inference prompt for the opponent of ``player`` at round ``t``.

    ``opp_view_h`` holds the first ``t - 1`` rounds as (opponent, self) pairs.
    """
    if not menu:
        raise ValueError("menu must be nonempty")
    if len(opp_view_h) != t - 1:
        raise ValueError(f"round {t} needs {t - 1} history rounds, got {len(opp_view_h)}")
    n = t - 1
    lines = [
        f"You are inferring Player A's strategy (the opponent) in repeated {game.display_name}.",
        "A strategy maps the prior history to the player's next action, possibly at random.",
        rules_text(game, player),
        f"Observed rounds so far: {n}.",
        "",
        "Allowed labels:",
        *_label_lines(menu),
        "",
        "Observed action history tuple format: (Player A action, Player B action).",
        "Player A is the opponent whose strategy label you must infer.",
        "Player B is you (the decision-maker).",
    ]
    if n:
        lines.append(f"Context history as (Player A, Player B), rounds 1-{n}:")
        lines += [f"round {k}: Player A={a}, Player B={b}" for k, (a, b) in enumerate(opp_view_h, start=1)]
    lines += _prior_line(prior_label)
    lines += [
        "Output rule: do NOT output scores, reasoning, or ranking.",
        "Respond with exactly one label only.",
        "",
        OUTPUT_RULE,
    ]
    return PromptBundle("", "\n".join(lines))


def _strategy_context(game: GameSpec, menu: Sequence[StrategySpec] | None, t: int,
                      prior_label: str | None, tokens: Sequence[str]) -> list[str]:
    lines = []
    if menu:
        lines += [
            f"In repeated {game.display_name}, a strategy maps prior history to a player's next action "
            "(possibly probabilistically).",
            "Allowed strategies:",
            *_label_lines(menu),
            "",
        ]
    lines += [
        "Role mapping in this prompt:",
        "- Player A is the other player.",
        "- Player B is you.",
        f"Observed rounds so far: {t - 1}.",
        *_prior_line(prior_label),
        f"Allowed action tokens: {', '.join(tokens)}.",
        "Output rule: do NOT output scores, reasoning, or ranking.",
        "Respond with exactly one action only.",
    ]
    return lines


def _history_lines(h: Sequence[JointAction]) -> list[str]:
    lines = ["Observed action history (your action, opponent action):"]
    lines += [f"Round {k}: {a}, {b}" for k, (a, b) in enumerate(h, start=1)]
    return lines


_BASE_QUERY = {
    ("BoS", 0): "Q: Which Option do you choose,  J or  F?",
    ("BoS", 1): "Q: Which Option do you choose,  J or  F?",
    ("PD", 0): "Q: Which action do you choose, J or F?",
    ("PD", 1): "Q: Which action do you choose, J or F?",
    ("Promo", 0): "Q: Which action do you choose, R, P, or Z?",
    ("Promo", 1): "Q: Which action do you choose, R, P, or Z?",
    ("Samaritan", 0): "Q: Which action do you choose, H or N?",
    ("Samaritan", 1): "Q: Which action do you choose, W or S?",
    ("Lemons", 0): "Q: Which action do you choose, HQ or LQ?",
    ("Lemons", 1): "Q: Which action do you choose,  B or  D?",
}

_PREDICT_QUERY = {
    ("BoS", 0): "Q: Which action do you predict the other player will choose, J or F?",
    ("BoS", 1): "Q: Which action do you predict the other player will choose, J or F?",
    ("PD", 0): "Q: Which action do you predict the other player will choose, J or F?",
    ("PD", 1): "Q: Which action do you predict the other player will choose, J or F?",
    ("Promo", 0): "Q: Which action do you predict the other player will choose, R, P, or Z?",
    ("Promo", 1): "Q: Which action do you predict the other player will choose, R, P, or Z?",
    ("Samaritan", 0): "Q: Which action do you predict the other player will choose, W or S?",
    ("Samaritan", 1): "Q: Which action do you predict the other player will choose, action H or action N?",
    ("Lemons", 0): "Q: Which Option do you predict the other player will choose, Option B or Option D?",
    ("Lemons", 1): "Q: Which Option do you predict the other player will choose, Option HQ or Option LQ?",
}


def _choose_query(game: GameSpec, player: int, pred: str, t: int) -> list[str]:
    own = game.own_actions(player)
    if game.name == "Promo":
        return [
            f"Q: Given that you think the other player will choose {pred} in round {t},",
            "imagine the outcome for your possible actions (R, P, and Z),",
            "compare which gives you a better result, and then choose.",
            "Which action do you think is best for you in this round, R, P, or Z?",
            "Output only one action: R, P, or Z.",
        ]
    a, b = own
    best = "is the best" if game.name in ("BoS", "PD") else "is best"
    return [
        f"Q: Given that you think the other player will choose Option {pred} in round {t},",
        f"imagine the outcome for both of your possible actions (Option {a} and Option {b}),",
        "compare which gives you a better result, and then choose.",
        f"Which Option do you think {best} to choose for you in this round, Option {a} or Option {b}?",
        f"Output only one letter: {a} or {b}.",
    ]


def _query(table: dict, game: GameSpec, player: int, fallback: str) -> str:
    return table.get((game.name, player), fallback)


def build_base_prompt(game: GameSpec, role, h: Sequence[JointAction], t: int,
                      menu: Sequence[StrategySpec] | None = None,
                      prior_label: str | None = None) -> PromptBundle:
    player = game.role_index(role)
    own = game.own_actions(player)
    query = _query(_BASE_QUERY, game, player, f"Q: Which action do you choose, {' or '.join(own)}?")
    lines = [
        rules_text(game, player),
        *_history_lines(h),
        f"You are currently playing round {t}.",
        query,
        *_strategy_context(game, menu, t, prior_label, own),
        "A:",
    ]
    return PromptBundle("", "\n".join(lines))


def build_scot_prompts(game: GameSpec, role, h: Sequence[JointAction], t: int,
                       prediction: str | None = None,
                       menu: Sequence[StrategySpec] | None = None,
                       prior_label: str | None = None) -> PromptBundle:
    """Stage-1 prediction prompt, or the stage-2 action prompt once
    ``prediction`` (an opponent action token) is known."""
    player = game.role_index(role)
    if len(h) != t - 1:
        raise ValueError(f"round {t} needs {t - 1} history rounds, got {len(h)}")
    head = [rules_text(game, player), *_history_lines(h), f"You are currently playing round {t}."]
    if prediction is None:
        opp = game.opp_actions(player)
        query = _query(_PREDICT_QUERY, game, player,
                       f"Q: Which action do you predict the other player will choose, {' or '.join(opp)}?")
        body = [query, *_strategy_context(game, menu, t, prior_label, opp)]
    else:
        if prediction not in game.opp_actions(player):
            raise ValueError(f"prediction {prediction!r} is not an opponent action")
        body = _choose_query(game, player, prediction, t)
    return PromptBundle("", "\n".join(head + body + ["A:"]))
