"""Administer a questionnaire to a chat model or a simulated respondent.

A transport is anything with ``name`` and ``send(request) -> TransportReply``.
Built-in transports: :class:`AgreeBot`, :class:`RandomBot`,
:class:`SimulatorBot`, :class:`ProbabilityTransport` (wraps a local
next-token distribution) and :class:`OpenAICompatibleTransport`.
"""
from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import MISSING, Item, LikertScale, Questionnaire, ResponseMatrix
from .simulate import DEFAULT_THRESHOLDS, key_signs

log = logging.getLogger(__name__)

ANSWER_INSTRUCTION = "Respond only with a single number."
PERSONA_PREFIX = "Answer every question as the person described here would."


class ConfigError(ValueError):
    """Invalid harness or transport configuration; raised before any request."""


class TransportError(RuntimeError):
    """A failed request. ``respondent``/``item`` locate it when known."""

    def __init__(self, message, respondent=None, item=None):
        self.respondent = respondent
        self.item = item
        where = f" [{respondent}/{item}]" if respondent is not None else ""
        super().__init__(f"{message}{where}")


class Context(str, Enum):
    NO_CONTEXT = "no-context"
    IN_CONTEXT = "in-context"


class PersonaMode(str, Enum):
    WITH_PERSONA = "with-persona"
    EMPTY = "empty"


@dataclass(frozen=True)
class Persona:
    id: str
    statements: tuple[str, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.statements


EMPTY_PERSONA = Persona("empty")


def load_personas(path=None) -> list[Persona]:
    """Read a persona file (``{"personas": [{"id", "statements"}]}``); default is the bundled list."""
    if path is None:
        text = resources.files("llmpsych.data").joinpath("personas.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    records = data["personas"] if isinstance(data, dict) else data
    personas = [Persona(str(r["id"]), tuple(r["statements"])) for r in records]
    for p in personas:
        if p.is_empty:
            raise ConfigError(f"persona {p.id} has no statements")
    return personas


@dataclass(frozen=True)
class PromptRegime:
    context: Context = Context.NO_CONTEXT
    persona_mode: PersonaMode = PersonaMode.WITH_PERSONA
    seed_answer: int | str | None = None

    def __post_init__(self):
        object.__setattr__(self, "context", Context(self.context))
        object.__setattr__(self, "persona_mode", PersonaMode(self.persona_mode))
        if self.seed_answer is not None:
            if self.context is not Context.IN_CONTEXT or self.persona_mode is not PersonaMode.EMPTY:
                raise ConfigError("a seeded first answer needs in-context mode with empty personas")
            if self.seed_answer != "cycle" and not isinstance(self.seed_answer, int):
                raise ConfigError(f"seed answer must be a code or 'cycle', got {self.seed_answer!r}")

    def validate(self, scale: LikertScale) -> None:
        if isinstance(self.seed_answer, int) and self.seed_answer not in scale:
            raise ConfigError(f"seed answer {self.seed_answer} outside the scale")

    def seed_for(self, run: int, scale: LikertScale) -> int | None:
        if self.seed_answer == "cycle":
            return scale.min_code + run % len(scale.codes)
        return self.seed_answer

    @property
    def tag(self) -> str:
        s = f"{self.context.value}/{self.persona_mode.value}"
        return s if self.seed_answer is None else f"{s}/seed={self.seed_answer}"


@dataclass(frozen=True)
class TransportRequest:
    system_text: str
    turns: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    @property
    def messages(self) -> list[dict]:
        return [{"role": "system", "content": self.system_text},
                *({"role": r, "content": t} for r, t in self.turns)]


@dataclass(frozen=True)
class TransportReply:
    token: str | None = None
    probabilities: dict | None = None

    def __post_init__(self):
        if self.probabilities is not None and any(v < 0 for v in self.probabilities.values()):
            raise ValueError("negative probability in reply")

    def to_json(self):
        if self.probabilities is not None:
            return {"probabilities": self.probabilities}
        return {"token": self.token}


class ChatTransport(Protocol):
    name: str

    def send(self, request: TransportRequest) -> TransportReply: ...


def item_prompt(item: Item, q: Questionnaire) -> str:
    text = item.text.rstrip(".")
    instruction = q.instruction or "{item}"
    if "{item" not in instruction:
        instruction += " {item}"
    stem = (instruction.replace("{item_lower}", text[:1].lower() + text[1:])
            .replace("{item}", item.text))
    options = "\n".join(f"{code} - {label}" for code, label in q.scale.codes)
    return f"{stem}\n{options}\nAnswer:"


def system_prompt(persona: Persona) -> str:
    if persona.is_empty:
        return ANSWER_INSTRUCTION
    return f"{PERSONA_PREFIX} {' '.join(persona.statements)}\n{ANSWER_INSTRUCTION}"


def build_prompt(item: Item, regime: PromptRegime, persona: Persona, history=(),
                 q: Questionnaire | None = None, temperature: float = 0.0, max_tokens: int = 1,
                 meta: dict | None = None) -> TransportRequest:
    """Assemble the request for ``item``.

    ``history`` holds ``(item, answer_text)`` pairs already asked of this
    respondent; it must be empty in no-context mode. Prior answers appear as
    bare codes in the assistant turns.
    """
    if q is None:
        raise ConfigError("build_prompt needs the questionnaire for its instruction and scale")
    history = tuple(history)
    if regime.context is Context.NO_CONTEXT and history:
        raise ConfigError("no-context prompts cannot carry history")
    persona = EMPTY_PERSONA if regime.persona_mode is PersonaMode.EMPTY else persona
    turns = []
    for prev, answer in history:
        turns.append(("user", item_prompt(prev, q)))
        turns.append(("assistant", str(answer)))
    turns.append(("user", item_prompt(item, q)))
    info = {"item": item.id, "persona": persona.id}
    info.update(meta or {})
    return TransportRequest(system_prompt(persona), tuple(turns), temperature, max_tokens, info)


def llama2_prompt(request: TransportRequest) -> str:
    """Render a request with the Llama-2 chat template."""
    out = []
    sys_block = f"<<SYS>>\n{request.system_text}\n<</SYS>>\n\n"
    turns = list(request.turns)
    first = True
    for k in range(0, len(turns), 2):
        user = turns[k][1]
        head = f"<s>[INST] {sys_block if first else ''}{user} [/INST]"
        first = False
        if k + 1 < len(turns):
            out.append(f"{head} {turns[k + 1][1]} </s>")
        else:
            out.append(head)
    return "".join(out)


def renormalize(probabilities: dict, answer_tokens: Sequence[str]) -> dict | None:
    """Restrict to ``answer_tokens`` and rescale to sum 1; ``None`` if no mass remains."""
    sub = {t: float(probabilities.get(t, 0.0)) for t in answer_tokens}
    total = math.fsum(sub.values())
    if not total > 0:
        return None
    return {t: v / total for t, v in sub.items()}


def renormalize_and_sample(probabilities: dict, scale: LikertScale, policy: str = "argmax",
                           rng=None) -> int:
    tokens = [str(c) for c, _ in scale.codes]
    p = renormalize(probabilities, tokens)
    if p is None:
        return MISSING
    if policy == "argmax":
        best = max(tokens, key=lambda t: (p[t], -int(t)))
        return int(best)
    if policy == "sample":
        rng = np.random.default_rng(rng)
        return int(tokens[rng.choice(len(tokens), p=np.array([p[t] for t in tokens]))])
    raise ConfigError(f"unknown selection policy {policy!r}")


def parse_reply(reply: TransportReply, scale: LikertScale, policy: str = "argmax", rng=None) -> int:
    """Answer code for ``reply``, or ``MISSING``. Never raises on reply content."""
    try:
        if reply.probabilities is not None:
            return renormalize_and_sample(reply.probabilities, scale, policy, rng)
        tok = (reply.token or "").strip()
        if tok.lstrip("-").isdigit() and int(tok) in scale:
            return int(tok)
    except (TypeError, ValueError, AttributeError):
        pass
    return MISSING


def _stable_seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([zlib.crc32(str(p).encode()) for p in parts])


class AgreeBot:
    """Always answers the same code (maximum agreement by default)."""

    def __init__(self, code: int = 5):
        self.code = code
        self.name = "agree-bot" if code == 5 else f"constant-bot-{code}"

    def send(self, request):
        return TransportReply(token=str(self.code))


class RandomBot:
    """Uniform answers, deterministic in (seed, respondent, item)."""

    name = "random-bot"

    def __init__(self, scale: LikertScale, seed: int = 0):
        self.scale = scale
        self.seed = seed

    def send(self, request):
        rng = np.random.default_rng(_stable_seed(self.seed, request.meta.get("respondent"),
                                                 request.meta.get("item")))
        return TransportReply(token=str(int(rng.integers(self.scale.min_code, self.scale.max_code + 1))))


class SimulatorBot:
    """Latent-factor respondent: each respondent id gets its own factor scores.

    Answers ``lambda . w + noise`` discretized like :func:`simulate.discretize`.
    """

    name = "simulator"

    def __init__(self, q: Questionnaire, loadings, noise_sd: float = 0.5, seed: int = 0,
                 thresholds=DEFAULT_THRESHOLDS):
        L = np.asarray(loadings, dtype=float)
        if L.shape[0] != len(q.items):
            raise ConfigError("loading spec does not match the questionnaire")
        self.signed = L * key_signs(q)[:, None]
        self.sd = np.sqrt((L**2).sum(axis=1) + noise_sd**2)
        self.noise_sd = noise_sd
        self.seed = seed
        self.thresholds = np.asarray(thresholds)
        self.row = {iid: k for k, iid in enumerate(q.item_ids)}

    def send(self, request):
        rid = request.meta.get("respondent")
        k = self.row[request.meta["item"]]
        w = np.random.default_rng(_stable_seed(self.seed, rid)).standard_normal(self.signed.shape[1])
        e = np.random.default_rng(_stable_seed(self.seed, rid, request.meta["item"])).standard_normal()
        x = (self.signed[k] @ w + self.noise_sd * e) / self.sd[k]
        return TransportReply(token=str(int(np.searchsorted(self.thresholds, x, side="right")) + 1))


class ProbabilityTransport:
    """Wrap ``fn(prompt_text) -> {token: probability}`` such as a local causal LM head.

    The prompt is rendered with :func:`llama2_prompt` unless ``render`` is given.
    """

    def __init__(self, fn, name: str = "local-model", render=llama2_prompt):
        self.fn = fn
        self.name = name
        self.render = render

    def send(self, request):
        try:
            return TransportReply(probabilities=dict(self.fn(self.render(request))))
        except Exception as exc:
            raise TransportError(str(exc)) from exc


class OpenAICompatibleTransport:
    """Chat-completions client (OpenAI wire format).

    The API key is read from the environment variable ``api_key_env`` at
    construction; a missing key raises :class:`ConfigError`.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 max_in_flight: int = 4, timeout: float = 60.0, logprobs: bool = False,
                 client=None):
        import httpx

        key = os.environ.get(api_key_env)
        if not key:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        if not endpoint:
            raise ConfigError("endpoint URL is required")
        self.name = f"openai-compatible:{model}"
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.model = model
        self.logprobs = logprobs
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {key}"}

    def payload(self, request: TransportRequest) -> dict:
        body = {"model": self.model, "messages": request.messages,
                "temperature": request.temperature, "max_tokens": request.max_tokens}
        if self.logprobs:
            body.update(logprobs=True, top_logprobs=20)
        return body

    def send(self, request):
        import httpx

        with self._slots:
            try:
                resp = self._client.post(self.url, json=self.payload(request), headers=self._headers)
            except httpx.HTTPError as exc:
                raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            if self.logprobs and choice.get("logprobs"):
                top = choice["logprobs"]["content"][0]["top_logprobs"]
                probs = {}
                for t in top:
                    tok = t["token"].strip()
                    probs[tok] = probs.get(tok, 0.0) + math.exp(t["logprob"])
                return TransportReply(probabilities=probs)
            return TransportReply(token=choice["message"]["content"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed response: {exc}") from exc


class Journal:
    """Append-only JSONL record of every query; also the resume source."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.done = {}
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        if rec.get("status") == "ok":
                            self.done[(rec["regime"], rec["respondent"], rec["item"])] = rec

    def lookup(self, regime, respondent, item):
        return self.done.get((regime, respondent, item))

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")
            if record.get("status") == "ok":
                self.done[(record["regime"], record["respondent"], record["item"])] = record


def _reply_from_json(raw) -> TransportReply:
    if raw is None:
        return TransportReply()
    if "probabilities" in raw:
        return TransportReply(probabilities=raw["probabilities"])
    return TransportReply(token=raw.get("token"))


def administer(q: Questionnaire, regime: PromptRegime, personas: Sequence[Persona] | None,
               transport: ChatTransport, runs: int, *, temperature: float = 0.0,
               max_tokens: int = 1, journal: Journal | None = None, jobs: int = 1,
               retries: int = 3, backoff: float = 0.5, seed: int = 0,
               policy: str | None = None, sleep=time.sleep) -> ResponseMatrix:
    """Collect one completed questionnaire per persona (or per run).

    Transport errors are retried ``retries`` times with exponential backoff;
    an item that still fails is recorded as ``MISSING`` and counted in
    ``meta["failures"]``.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    regime.validate(q.scale)
    if regime.persona_mode is PersonaMode.WITH_PERSONA:
        if personas is None or len(personas) < runs:
            raise ConfigError(f"persona mode needs at least {runs} personas")
        respondents = [(p.id, p) for p in personas[:runs]]
    else:
        respondents = [(f"run{r:03d}", EMPTY_PERSONA) for r in range(runs)]
    if policy is None:
        policy = "argmax" if temperature == 0 else "sample"
    failures = []

    def ask(rid, persona, item, history):
        cached = journal.lookup(regime.tag, rid, item.id) if journal else None
        if cached is not None:
            return cached["parsed"], cached["answer_text"]
        req = build_prompt(item, regime, persona, history, q, temperature, max_tokens,
                           meta={"respondent": rid})
        reply, error = None, None
        for attempt in range(retries):
            try:
                reply = transport.send(req)
                break
            except TransportError as exc:
                error = TransportError(str(exc), rid, item.id)
                log.warning("%s (attempt %d/%d)", error, attempt + 1, retries)
                if attempt + 1 < retries:
                    sleep(backoff * 2**attempt)
        if reply is None:
            failures.append((rid, item.id))
            code, answer_text, status = MISSING, "", "failed"
        else:
            code = parse_reply(reply, q.scale, policy, _stable_seed(seed, rid, item.id))
            answer_text = reply.token.strip() if reply.token is not None else str(code)
            status = "ok"
        if journal is not None:
            journal.append({
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "regime": regime.tag, "persona": persona.id, "respondent": rid, "item": item.id,
                "raw": reply.to_json() if reply is not None else None,
                "error": None if error is None or reply is not None else str(error),
                "parsed": int(code), "answer_text": answer_text, "status": status,
                "transport": transport.name,
            })
        return code, answer_text

    def respond(run, rid, persona):
        row = np.full(len(q.items), MISSING, dtype=np.int64)
        history = []
        start = 0
        seed_code = regime.seed_for(run, q.scale)
        if seed_code is not None:
            row[0] = seed_code
            history.append((q.items[0], str(seed_code)))
            start = 1
        for k in range(start, len(q.items)):
            item = q.items[k]
            ctx = history if regime.context is Context.IN_CONTEXT else ()
            code, text = ask(rid, persona, item, tuple(ctx))
            row[k] = code
            history.append((item, text))
        return row

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(respond, r, rid, p) for r, (rid, p) in enumerate(respondents)]
            rows = [f.result() for f in futures]
    else:
        rows = [respond(r, rid, p) for r, (rid, p) in enumerate(respondents)]
    meta = {"transport": transport.name, "regime": regime.context.value,
            "persona_mode": regime.persona_mode.value, "failures": len(failures)}
    if regime.seed_answer is not None:
        meta["seed_answer"] = regime.seed_answer
    return ResponseMatrix(tuple(rid for rid, _ in respondents), tuple(q.item_ids),
                          np.vstack(rows), provenance=f"{transport.name} {regime.tag}", meta=meta)
