from __future__ import annotations

import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from psbr.engine import MatchConfig, run_match
from psbr.games import BOS, LEMONS, PD, PROMO
from psbr.llm import (
    OUTPUT_RULE, ChatClient, LLMUnavailable, PromptBundle, ProviderConfig, build_base_prompt,
    build_inference_prompt, build_scot_prompts, infer_label, parse_token, request_action,
)
from psbr.strategies import menu_for

GOLDEN = Path(__file__).parent / "golden"
PD_MENU = menu_for("PD", 1)
PROVIDER = ProviderConfig("http://llm.test/v1/chat/completions", "test-model", max_retries=3)


def scripted(replies, log=None):
    """Transport that answers with ``replies`` in order and records request bodies."""
    replies = list(replies)

    def handler(request: httpx.Request):
        body = json.loads(request.content)
        if log is not None:
            log.append(body)
        text = replies.pop(0) if len(replies) > 1 else replies[0]
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})

    return httpx.MockTransport(handler)


# prompt rendering

def test_inference_prompt_first_round():
    p = build_inference_prompt(PD, [], PD_MENU, 1)
    assert "Observed rounds so far: 0." in p.user
    assert "round 1:" not in p.user
    assert p.user.startswith("You are inferring Player A's strategy (the opponent) in repeated")
    assert p.user.endswith(OUTPUT_RULE)


def test_inference_prompt_lists_each_label_once():
    p = build_inference_prompt(PD, [("J", "J"), ("F", "J")], PD_MENU, 3)
    for s in PD_MENU:
        assert p.user.count(f"- {s.label}: ") == 1
    assert "round 2: Player A=F, Player B=J" in p.user


def test_inference_prompt_prior_line():
    p = build_inference_prompt(PD, [], PD_MENU, 1, prior_label="grim_trigger")
    assert "Strongly expect Player A to play with strategy 'grim_trigger'." in p.user
    with pytest.raises(ValueError):
        build_inference_prompt(PD, [], [], 1)
    with pytest.raises(ValueError):
        build_inference_prompt(PD, [], PD_MENU, 2)


def test_scot_prompts():
    assert "predict the other player" in build_scot_prompts(PD, 0, [], 1).user
    s2 = build_scot_prompts(BOS, 0, [("J", "F")], 2, prediction="J")
    assert "Option J in round 2" in s2.user
    buyer = build_scot_prompts(LEMONS, "buyer", [], 1, prediction="HQ")
    assert "Option B or Option D" in buyer.user
    with pytest.raises(ValueError):
        build_scot_prompts(LEMONS, "buyer", [], 1, prediction="B")
    promo = build_scot_prompts(PROMO, 1, [], 1, prediction="R")
    assert "R, P, or Z" in promo.user


@pytest.mark.parametrize("name,build", [
    ("pd_inference", lambda: build_inference_prompt(PD, [("J", "J"), ("F", "J")], PD_MENU, 3, "grim_trigger")),
    ("bos_scot_stage2", lambda: build_scot_prompts(BOS, 1, [("J", "F")], 2, prediction="F")),
    ("lemons_base", lambda: build_base_prompt(LEMONS, "buyer", [("B", "HQ")], 2)),
])
def test_prompts_match_golden_files(name, build):
    text = build().user
    assert text == build().user
    assert text == (GOLDEN / f"{name}.txt").read_text()


# parsing

def test_parse_token():
    labels = [s.label for s in PD_MENU]
    assert parse_token("tft", labels) == "tft"
    assert parse_token("  TFT\n", labels) == "tft"
    assert parse_token("I think tft because", labels) is None
    assert parse_token("tft wsls", labels) is None
    assert parse_token("", labels) is None


# client

def test_complete_sends_chat_payload():
    log = []
    with ChatClient(PROVIDER, transport=scripted(["tft"], log)) as c:
        assert c.complete(PromptBundle("sys", "hello"), seed=4) == "tft"
    body = log[0]
    assert body["model"] == "test-model" and body["seed"] == 4
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hello"}]


def test_infer_label_success_and_retry():
    log = []
    prompt = build_inference_prompt(PD, [], PD_MENU, 1)
    with ChatClient(PROVIDER, transport=scripted(["tft"], log)) as c:
        r = infer_label(c, prompt, PD_MENU, np.random.default_rng(0))
    assert (r.label, r.attempts, r.fallback) == ("tft", 1, False)
    with ChatClient(PROVIDER, transport=scripted(["I think tft because...", "wsls"])) as c:
        r = infer_label(c, prompt, PD_MENU)
    assert (r.label, r.attempts, r.fallback) == ("wsls", 2, False)


def test_infer_label_falls_back_to_first_label():
    log = []
    with ChatClient(PROVIDER, transport=scripted(["no idea"], log)) as c:
        r = infer_label(c, build_inference_prompt(PD, [], PD_MENU, 1), PD_MENU)
    assert (r.label, r.attempts, r.fallback) == ("allc", 4, True)
    assert len(log) == 4


def test_transport_failure_signals_unavailable():
    def boom(request):
        raise httpx.ConnectError("refused")

    with ChatClient(PROVIDER, transport=httpx.MockTransport(boom)) as c:
        with pytest.raises(LLMUnavailable):
            infer_label(c, build_inference_prompt(PD, [], PD_MENU, 1), PD_MENU)
    bad_json = httpx.MockTransport(lambda r: httpx.Response(200, json={"nope": 1}))
    with ChatClient(PROVIDER, transport=bad_json) as c:
        with pytest.raises(LLMUnavailable):
            c.complete(PromptBundle("", "x"))
    server_error = httpx.MockTransport(lambda r: httpx.Response(503))
    with ChatClient(PROVIDER, transport=server_error) as c:
        with pytest.raises(LLMUnavailable):
            c.complete(PromptBundle("", "x"))


def test_request_action():
    with ChatClient(PROVIDER, transport=scripted(["maybe", " f "])) as c:
        assert request_action(c, PromptBundle("", "q"), ["J", "F"]) == "F"
    with ChatClient(ProviderConfig("http://x", "m", max_retries=0), transport=scripted(["?"])) as c:
        assert request_action(c, PromptBundle("", "q"), ["J", "F"]) is None


def test_provider_config(monkeypatch):
    with pytest.raises(ValueError):
        ProviderConfig("http://x", "m", max_retries=-1)
    monkeypatch.delenv("PSBR_LLM_ENDPOINT", raising=False)
    assert ProviderConfig.from_env() is None
    monkeypatch.setenv("PSBR_LLM_ENDPOINT", "http://env")
    monkeypatch.setenv("PSBR_LLM_MODEL", "env-model")
    p = ProviderConfig.from_env()
    assert (p.endpoint, p.model) == ("http://env", "env-model")
    assert ProviderConfig.from_env("http://arg", "m2").endpoint == "http://arg"


def test_engine_uses_llm_labels(monkeypatch):
    import psbr.engine as engine

    log = []
    transport = scripted(["alld"], log)
    real = engine.ChatClient
    monkeypatch.setattr(engine, "ChatClient", lambda provider: real(provider, transport=transport))
    rec = run_match(MatchConfig("PD", inference="llm-label", T=3, seed=0), PROVIDER)
    assert all(p.sampled_label == "alld" and p.source == "llm" for r in rec.rounds for p in r.players)
    assert all(a == ("F", "F") for a in rec.joint_actions())
    assert len(log) == 6
