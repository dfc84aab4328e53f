import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmpsych.core import FIVE_POINT, MISSING
from llmpsych.harness import (EMPTY_PERSONA, AgreeBot, ConfigError, Journal, OpenAICompatibleTransport,
                              Persona, ProbabilityTransport, PromptRegime, RandomBot, SimulatorBot,
                              TransportError, TransportReply, TransportRequest, administer, build_prompt,
                              item_prompt, llama2_prompt, load_personas, parse_reply, renormalize,
                              renormalize_and_sample)
from llmpsych.simulate import facet_loadings

P = Persona("p1", ("I love hiking.", "My dog is called Rex."))


# -- regimes -------------------------------------------------------------------

def test_seed_needs_in_context_empty():
    with pytest.raises(ConfigError):
        PromptRegime("no-context", "empty", 5)
    with pytest.raises(ConfigError):
        PromptRegime("in-context", "with-persona", 5)
    assert PromptRegime("in-context", "empty", 5).tag.endswith("seed=5")


def test_seed_out_of_range():
    with pytest.raises(ConfigError):
        PromptRegime("in-context", "empty", 9).validate(FIVE_POINT)


def test_cycle_seed():
    r = PromptRegime("in-context", "empty", "cycle")
    assert [r.seed_for(k, FIVE_POINT) for k in range(7)] == [1, 2, 3, 4, 5, 1, 2]


def test_negative_temperature_rejected():
    with pytest.raises(ConfigError):
        TransportRequest("s", (("user", "x"),), temperature=-0.1)


def test_negative_probability_rejected():
    with pytest.raises(ValueError):
        TransportReply(probabilities={"1": -0.1})


# -- prompts -------------------------------------------------------------------

def test_first_item_with_persona(bfi2):
    req = build_prompt(bfi2.items[0], PromptRegime(), P, (), bfi2)
    assert "I love hiking." in req.system_text and "Rex" in req.system_text
    assert req.turns[-1][0] == "user"
    assert req.turns[-1][1].endswith("Answer:")
    for code, label in bfi2.scale.codes:
        assert f"{code} - {label}" in req.turns[-1][1]


def test_empty_persona_system_text_is_instruction_only(bfi2):
    req = build_prompt(bfi2.items[3], PromptRegime("no-context", "empty"), P, (), bfi2)
    assert "hiking" not in req.system_text
    assert req.system_text == build_prompt(bfi2.items[0], PromptRegime("no-context", "empty"),
                                           EMPTY_PERSONA, (), bfi2).system_text


def test_in_context_history(bfi2):
    regime = PromptRegime("in-context", "empty", 5)
    req = build_prompt(bfi2.items[1], regime, EMPTY_PERSONA, [(bfi2.items[0], "5")], bfi2)
    assert [r for r, _ in req.turns] == ["user", "assistant", "user"]
    assert req.turns[1][1] == "5"
    assert bfi2.items[0].text.rstrip(".")[1:] in req.turns[0][1]


def test_no_context_rejects_history(bfi2):
    with pytest.raises(ConfigError):
        build_prompt(bfi2.items[1], PromptRegime(), P, [(bfi2.items[0], "3")], bfi2)


def test_item_text_in_instruction(ipip):
    text = item_prompt(ipip.items[0], ipip)
    assert ipip.items[0].text in text


def test_messages_wire_shape(bfi2):
    req = build_prompt(bfi2.items[0], PromptRegime(), P, (), bfi2)
    msgs = req.messages
    assert msgs[0]["role"] == "system" and msgs[-1]["role"] == "user"


def test_llama2_rendering(bfi2):
    req = build_prompt(bfi2.items[1], PromptRegime("in-context", "empty"), EMPTY_PERSONA,
                       [(bfi2.items[0], "4")], bfi2)
    s = llama2_prompt(req)
    assert s.startswith("<s>[INST] <<SYS>>")
    assert s.count("[INST]") == 2 and " 4 </s>" in s
    assert s.endswith("[/INST]")


def test_bundled_personas():
    ps = load_personas()
    assert len(ps) == 100
    assert all(p.statements for p in ps)
    assert len({p.id for p in ps}) == 100


def test_persona_file_rejects_empty(tmp_path):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"personas": [{"id": "a", "statements": []}]}))
    with pytest.raises(ConfigError):
        load_personas(f)


# -- reply parsing ---------------------------------------------------------------

@pytest.mark.parametrize("token,want", [("4", 4), (" 2\n", 2), ("Sure", MISSING), ("6", MISSING),
                                        ("", MISSING), (None, MISSING), ("-1", MISSING)])
def test_parse_token(token, want):
    assert parse_reply(TransportReply(token=token), FIVE_POINT) == want


def test_parse_probabilities_argmax():
    probs = {"1": .1, "2": .2, "3": .3, "4": .2, "5": .2}
    assert parse_reply(TransportReply(probabilities=probs), FIVE_POINT) == 3


def test_renormalize_with_junk_mass():
    p = renormalize({"1": .1, "2": .1, "3": .1, "4": .1, "5": .1, "Sure": .5}, list("12345"))
    assert all(math.isclose(v, .2) for v in p.values())
    assert math.isclose(sum(p.values()), 1.0)


def test_renormalize_zero_mass_is_missing():
    assert renormalize_and_sample({"x": 1.0}, FIVE_POINT) == MISSING


@settings(max_examples=60)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5).filter(lambda v: sum(v) > 1e-9),
       st.floats(0, 5))
def test_renormalize_sums_to_one(vals, junk):
    probs = {str(k + 1): v for k, v in enumerate(vals)}
    probs["junk"] = junk
    p = renormalize(probs, list("12345"))
    assert math.isclose(sum(p.values()), 1.0, rel_tol=1e-12)


def test_sample_policy_is_seeded():
    probs = {"1": .3, "2": .1, "3": .2, "4": .2, "5": .2}
    a = [renormalize_and_sample(probs, FIVE_POINT, "sample", np.random.SeedSequence(7)) for _ in range(5)]
    b = [renormalize_and_sample(probs, FIVE_POINT, "sample", np.random.SeedSequence(7)) for _ in range(5)]
    assert a == b


def test_unknown_policy():
    with pytest.raises(ConfigError):
        renormalize_and_sample({"1": 1.0}, FIVE_POINT, "mode")


# -- administration ---------------------------------------------------------------

def test_agree_bot_all_max(bfi2):
    rm = administer(bfi2, PromptRegime("in-context", "empty"), None, AgreeBot(), 4)
    assert np.all(rm.scores == 5)
    assert rm.meta["failures"] == 0


def test_seeded_first_item(bfi2):
    seen = []

    class Spy(AgreeBot):
        def send(self, request):
            seen.append(request)
            return super().send(request)

    rm = administer(bfi2, PromptRegime("in-context", "empty", 5), None, Spy(code=1), 3)
    assert np.all(rm.scores[:, 0] == 5)
    assert np.all(rm.scores[:, 1:] == 1)
    assert len(seen) == 3 * 59
    last = max(seen, key=lambda r: len(r.turns))
    assert len(last.turns) == 2 * 59 + 1 and last.turns[1][1] == "5"


def test_persona_mode_needs_enough_personas(bfi2):
    with pytest.raises(ConfigError):
        administer(bfi2, PromptRegime(), [P], AgreeBot(), 2)


def test_simulator_deterministic_and_parallel(bfi2):
    bot = SimulatorBot(bfi2, facet_loadings(bfi2), seed=3)
    regime = PromptRegime("no-context", "empty")
    a = administer(bfi2, regime, None, bot, 6)
    b = administer(bfi2, regime, None, SimulatorBot(bfi2, facet_loadings(bfi2), seed=3), 6, jobs=4)
    assert a == b
    assert len(set(map(tuple, a.scores))) == 6


def test_random_bot_range(bfi2):
    rm = administer(bfi2, PromptRegime("no-context", "empty"), None, RandomBot(bfi2.scale, 1), 20)
    assert rm.scores.min() >= 1 and rm.scores.max() <= 5
    assert len(np.unique(rm.scores)) == 5


def test_simulator_rejects_wrong_spec(bfi2):
    with pytest.raises(ConfigError):
        SimulatorBot(bfi2, np.zeros((10, 5)))


class Flaky:
    name = "flaky"

    def __init__(self, fail_times, bad_item=None):
        self.fail_times = fail_times
        self.bad_item = bad_item
        self.calls = {}

    def send(self, request):
        key = (request.meta["respondent"], request.meta["item"])
        self.calls[key] = self.calls.get(key, 0) + 1
        if request.meta["item"] == self.bad_item or self.calls[key] <= self.fail_times:
            raise TransportError("boom")
        return TransportReply(token="4")


def test_retry_then_success(ipip):
    t = Flaky(fail_times=2)
    sleeps = []
    rm = administer(ipip, PromptRegime("no-context", "empty"), None, t, 2, retries=3, sleep=sleeps.append)
    assert np.all(rm.scores == 4)
    assert sleeps[:2] == [0.5, 1.0]


def test_exhausted_retries_become_missing(ipip, tmp_path):
    t = Flaky(fail_times=0, bad_item="N3")
    j = Journal(tmp_path / "j.jsonl")
    rm = administer(ipip, PromptRegime("no-context", "empty"), None, t, 2, journal=j,
                    sleep=lambda s: None)
    col = rm.item_ids.index("N3")
    assert np.all(rm.scores[:, col] == MISSING)
    assert rm.meta["failures"] == 2
    recs = [json.loads(x) for x in (tmp_path / "j.jsonl").read_text().splitlines()]
    failed = [r for r in recs if r["status"] == "failed"]
    assert len(failed) == 2 and all("boom" in r["error"] for r in failed)


def test_journal_resume_skips_done_items(ipip, tmp_path):
    path = tmp_path / "j.jsonl"
    regime = PromptRegime("no-context", "empty")
    administer(ipip, regime, None, Flaky(0, bad_item="O10"), 3, journal=Journal(path), sleep=lambda s: None)
    t = Flaky(0)
    rm = administer(ipip, regime, None, t, 3, journal=Journal(path))
    assert set(t.calls) == {(f"run{r:03d}", "O10") for r in range(3)}
    assert np.all(rm.scores == 4)


def test_journal_records_raw_reply(ipip, tmp_path):
    path = tmp_path / "j.jsonl"
    fn = lambda prompt: {"1": .1, "2": .6, "3": .1, "4": .1, "5": .1, "<junk>": .9}  # noqa: E731
    rm = administer(ipip, PromptRegime("no-context", "empty"), None, ProbabilityTransport(fn), 1,
                    journal=Journal(path))
    assert np.all(rm.scores == 2)
    rec = json.loads(path.read_text().splitlines()[0])
    assert rec["raw"]["probabilities"]["<junk>"] == .9
    assert rec["parsed"] == 2


def test_probability_transport_wraps_errors(ipip):
    def bad(prompt):
        raise RuntimeError("gpu on fire")

    rm = administer(ipip, PromptRegime("no-context", "empty"), None, ProbabilityTransport(bad), 1,
                    retries=1)
    assert np.all(rm.scores == MISSING) and rm.meta["failures"] == 50


# -- remote transport wire format ----------------------------------------------------

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_missing_credential_is_config_error(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_VAR", raising=False)
    with pytest.raises(ConfigError, match="NO_SUCH_KEY_VAR"):
        OpenAICompatibleTransport("http://x", "m", api_key_env="NO_SUCH_KEY_VAR")


def test_openai_request_and_token_reply(monkeypatch, bfi2):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": "4"}}]})

    t = OpenAICompatibleTransport("http://host/v1/", "m1", "TEST_KEY", client=_client(handler))
    req = build_prompt(bfi2.items[0], PromptRegime(), P, (), bfi2)
    assert parse_reply(t.send(req), bfi2.scale) == 4
    assert seen["url"] == "http://host/v1/chat/completions"
    assert seen["auth"] == "Bearer sekrit"
    body = seen["body"]
    assert body["model"] == "m1" and body["temperature"] == 0 and body["max_tokens"] == 1
    assert body["messages"][0]["role"] == "system"


def test_openai_logprobs_reply(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "k")

    def handler(request):
        assert json.loads(request.content)["logprobs"] is True
        top = [{"token": "3", "logprob": math.log(.5)}, {"token": " 3", "logprob": math.log(.1)},
               {"token": "5", "logprob": math.log(.3)}, {"token": "I", "logprob": math.log(.1)}]
        return httpx.Response(200, json={"choices": [{"message": {"content": "3"},
                                                      "logprobs": {"content": [{"top_logprobs": top}]}}]})

    t = OpenAICompatibleTransport("http://h", "m", "TEST_KEY", logprobs=True, client=_client(handler))
    reply = t.send(TransportRequest("s", (("user", "q"),)))
    assert math.isclose(reply.probabilities["3"], .6)
    assert parse_reply(reply, FIVE_POINT) == 3


@pytest.mark.parametrize("status,body", [(500, {"error": "x"}), (200, {"nope": 1})])
def test_openai_errors_raise_transport_error(monkeypatch, status, body):
    monkeypatch.setenv("TEST_KEY", "k")
    t = OpenAICompatibleTransport("http://h", "m", "TEST_KEY",
                                  client=_client(lambda r: httpx.Response(status, json=body)))
    with pytest.raises(TransportError):
        t.send(TransportRequest("s", (("user", "q"),)))


def test_openai_network_error(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "k")

    def handler(request):
        raise httpx.ConnectError("refused")

    t = OpenAICompatibleTransport("http://h", "m", "TEST_KEY", client=_client(handler))
    with pytest.raises(TransportError, match="request failed"):
        t.send(TransportRequest("s", (("user", "q"),)))
