"""Chat-completion client, retry policy and the built-in mock generators."""
from __future__ import annotations

import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError
from .persona_synth import PATRON_TYPES, build_cohort
from .query_builder import ReferenceQuery, build_batch, load_roster

log = logging.getLogger(__name__)

PLACEHOLDER = "<GENERATION_FAILED>"
STATUS_OK = "ok"
STATUS_FAILED = "failed_placeholder"


class TransportError(Exception):
    """A single failed attempt; retried by :func:`complete`."""


@dataclass(frozen=True)
class GenerationConfig:
    model_id: str = "mock"
    endpoint_url: str | None = None
    max_tokens: int = 4096
    temperature: float = 0.7
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    per_seed_count: int = 500
    retries: int = 3
    supports_system_role: bool = True
    send_seed: bool = False
    concurrency: int = 4
    timeout: float = 60.0
    backoff_base: float = 1.0
    api_key_env: str = "REFAUDIT_API_KEY"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.max_tokens <= 0:
            raise ConfigurationError("max_tokens must be positive")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigurationError("temperature must lie in [0, 2]")
        if self.retries < 0:
            raise ConfigurationError("retries must be >= 0")
        if self.per_seed_count < 1:
            raise ConfigurationError("per_seed_count must be >= 1")
        if self.concurrency < 1:
            raise ConfigurationError("concurrency must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known - {"transport"}
        if unknown:
            raise ConfigurationError(f"unknown generation keys {sorted(unknown)}")
        return cls(**{k: (tuple(v) if k == "seeds" else v) for k, v in d.items() if k in known})


@dataclass(frozen=True)
class ChatRequest:
    payload: dict
    query: ReferenceQuery
    run_seed: int
    index: int


class Transport(Protocol):
    def __call__(self, request: ChatRequest) -> str: ...


@dataclass(frozen=True)
class InteractionRecord:
    query: ReferenceQuery
    model_id: str
    run_seed: int
    index: int
    response_text: str
    status: str
    word_count: int
    attempts: int = 1
    error: str | None = None

    def to_dict(self) -> dict:
        d = {
            "model_id": self.model_id,
            "run_seed": self.run_seed,
            "index": self.index,
            "status": self.status,
            "response_text": self.response_text,
            "word_count": self.word_count,
            "attempts": self.attempts,
            "error": self.error,
            "query": self.query.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionRecord":
        return cls(
            query=ReferenceQuery.from_dict(d["query"]),
            model_id=d["model_id"],
            run_seed=int(d["run_seed"]),
            index=int(d["index"]),
            response_text=d["response_text"],
            status=d["status"],
            word_count=int(d["word_count"]),
            attempts=int(d.get("attempts", 1)),
            error=d.get("error"),
        )


def word_count(text: str) -> int:
    return len(text.split())


def build_messages(query: ReferenceQuery, supports_system_role: bool) -> list[dict]:
    if supports_system_role:
        return [
            {"role": "system", "content": query.system_prompt},
            {"role": "user", "content": query.user_prompt},
        ]
    return [{"role": "user", "content": query.system_prompt + "\n\n" + query.user_prompt}]


def build_payload(query: ReferenceQuery, config: GenerationConfig, run_seed: int) -> dict:
    payload = {
        "model": config.model_id,
        "messages": build_messages(query, config.supports_system_role),
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
    }
    if config.send_seed:
        payload["seed"] = run_seed
    return payload


def _backoff(config: GenerationConfig, attempt: int, run_seed: int, index: int) -> float:
    jitter = random.Random(f"{run_seed}:{index}:{attempt}").uniform(-0.2, 0.2)
    return config.backoff_base * (2 ** attempt) * (1.0 + jitter)


def complete(
    query: ReferenceQuery,
    config: GenerationConfig,
    transport: Transport,
    run_seed: int = 0,
    index: int = 0,
    sleep: Callable[[float], None] = time.sleep,
) -> InteractionRecord:
    """Send one query, retrying transport failures ``config.retries`` times.

    Exhausted retries yield a ``failed_placeholder`` record carrying the last
    error message rather than raising.
    """
    request = ChatRequest(build_payload(query, config, run_seed), query, run_seed, index)
    last_error = None
    attempts = 0
    for attempt in range(config.retries + 1):
        attempts += 1
        try:
            text = transport(request)
            if not text or not text.strip() or text.strip() == PLACEHOLDER:
                raise TransportError("empty or placeholder response")
            return InteractionRecord(query, config.model_id, run_seed, index, text, STATUS_OK,
                                     word_count(text), attempts)
        except Exception as exc:  # noqa: BLE001 - every failure is retried then recorded
            last_error = f"{type(exc).__name__}: {exc}"
            if attempt < config.retries:
                delay = _backoff(config, attempt, run_seed, index)
                if delay > 0:
                    sleep(delay)
    log.warning("seed %s item %s failed after %d attempts: %s", run_seed, index, attempts, last_error)
    return InteractionRecord(query, config.model_id, run_seed, index, PLACEHOLDER, STATUS_FAILED,
                             word_count(PLACEHOLDER), attempts, last_error)


BatchBuilder = Callable[[int, int], Sequence[ReferenceQuery]]


def default_batch_builder(first_names=None, surnames=None, roster=None) -> BatchBuilder:
    roster = roster if roster is not None else load_roster()

    def builder(seed: int, n: int) -> list[ReferenceQuery]:
        cohort = build_cohort(n, seed, first_names, surnames)
        batch_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])
        return build_batch(cohort, roster, batch_seed)

    return builder


def run_campaign(
    batch_builder: BatchBuilder,
    config: GenerationConfig,
    transport: Transport,
    sleep: Callable[[float], None] = time.sleep,
) -> list[InteractionRecord]:
    """Generate and complete ``per_seed_count`` queries for every seed.

    Requests run on a bounded thread pool; results come back ordered by
    (seed, batch index) regardless of completion order.
    """
    if len(set(config.seeds)) != len(config.seeds):
        raise ConfigurationError("seeds must be distinct")
    records: list[InteractionRecord] = []
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        for seed in config.seeds:
            batch = batch_builder(seed, config.per_seed_count)
            futures = [
                pool.submit(complete, q, config, transport, seed, i, sleep) for i, q in enumerate(batch)
            ]
            records.extend(f.result() for f in futures)
    return records


def write_records(records: Sequence[InteractionRecord], path: str | Path, append: bool = False) -> None:
    with Path(path).open("a" if append else "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> list[InteractionRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [InteractionRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


class HttpTransport:
    """OpenAI-compatible ``/chat/completions`` endpoint over httpx."""

    def __init__(self, endpoint_url: str, api_key: str | None = None, timeout: float = 60.0, client=None):
        import httpx

        self.endpoint_url = endpoint_url
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_config(cls, config: GenerationConfig) -> "HttpTransport":
        if not config.endpoint_url:
            raise ConfigurationError("endpoint_url is required for the HTTP transport")
        return cls(config.endpoint_url, os.environ.get(config.api_key_env), config.timeout)

    def __call__(self, request: ChatRequest) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.endpoint_url, json=request.payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc


# ---------------------------------------------------------------------------
# mock generators

MOCK_PROFILES = ("null_bias", "dear_sex_bias", "role_accommodation")

# "Dear <name>," opening rates by patron sex
DEAR_RATES = {"female": 0.662, "male": 0.484}
NULL_DEAR_RATE = 0.5
# analytic ceiling for sex accuracy on a balanced dear_sex_bias corpus
BAYES_SEX_ACCURACY = 0.5 * DEAR_RATES["female"] + 0.5 * (1 - DEAR_RATES["male"])

ROLE_REGARDS_RATES = {
    "Alumni": 0.55, "Faculty": 0.75, "Graduate": 0.35,
    "Undergraduate": 0.15, "Staff": 0.65, "Outside": 0.45,
}
ROLE_RESEARCH_RATES = {
    "Alumni": 0.30, "Faculty": 0.85, "Graduate": 0.70,
    "Undergraduate": 0.20, "Staff": 0.25, "Outside": 0.60,
}

# random filler sentence count is drawn from [lo, hi)
FILLER_SENTENCES = (1, 3)
_NEUTRAL_GREETINGS = ("Hello,", "Hi there,", "Greetings,", "Good afternoon,", "Good morning,")
_NEUTRAL_CLOSINGS = ("Best,", "Sincerely,", "Warm wishes,", "All the best,", "Cheers,")
_RESEARCH_SENTENCE = "If this is part of a larger research project, our subject specialists can suggest further research databases."

_OPENERS = {
    "subject": (
        "I would be glad to point you toward material on {collection_topic}.",
        "Our holdings on {collection_topic} are a good place to begin.",
        "Material about {collection_topic} is spread across several of our collections.",
    ),
    "sports": (
        "The story of how the {team_name} name was chosen at {university} is well documented.",
        "Questions about the {team_name} name come up often at {university}.",
        "The origin of the {team_name} name at {university} has an interesting history.",
    ),
    "population": (
        "Historical population figures for {city} are available from several sources.",
        "Finding population counts for {city} for those two years is quite doable.",
        "Census publications are the standard source for population figures for {city}.",
    ),
}

# shared by every mock response; only the filler varies
_BOILERPLATE = (
    "Thank you for contacting the library with your question.",
    "I checked our catalog and the research guides for this topic.",
)

_WORDS = {
    "resource": ("databases", "catalogs", "archives", "newspapers", "journals", "yearbooks",
                 "reports", "pamphlets", "microfilm", "maps", "photographs", "almanacs",
                 "directories", "bibliographies", "indexes", "digital exhibits"),
    "place": ("reading room", "special collections department", "main library", "reference desk",
              "government documents section", "digital repository", "university archives",
              "interlibrary loan office", "periodicals area", "local history room"),
    "action": ("search", "browse", "request", "consult", "review", "explore", "scan", "download",
               "borrow", "check"),
    "time": ("today", "this week", "within two business days", "during regular hours",
             "on weekdays", "before the end of the month", "at your convenience"),
    "adj": ("useful", "helpful", "detailed", "relevant", "comprehensive", "reliable", "excellent",
            "valuable", "thorough", "accessible"),
}

_BODY = (
    "You can {action} our {resource} from the library website at any time.",
    "Many {adj} {resource} are held in the {place}.",
    "Staff in the {place} can help you {action} older {resource}.",
    "The {place} is open {time} and welcomes visitors.",
    "I recommend that you {action} the {resource} first, since they are often {adj}.",
    "Some {resource} may only be available on site in the {place}.",
    "Digitized {resource} can usually be viewed online without an appointment.",
    "If an item is not in our catalog, the {place} can request a copy for you.",
    "Please note that copyright rules may limit how many pages we can copy.",
    "We can often send scanned pages {time}.",
    "Another {adj} option is to {action} state and county {resource}.",
    "Local public libraries also keep {adj} {resource} on this subject.",
    "A librarian in the {place} can walk you through the {resource}.",
    "You may also want to {action} the online guides we maintain for this topic.",
    "The {resource} in our collection go back more than a century.",
    "Citation details will make it easier to {action} specific {resource}.",
    "Some older {resource} are fragile and must be handled in the {place}.",
    "An appointment is not required, but it helps us prepare the {resource} in advance.",
    "If you are off campus, remote access to most {resource} requires a library account.",
    "Our delivery service can mail copies {time} for a small fee.",
    "The {place} can also provide guidance on citing {resource} correctly.",
    "Many people find the {resource} more {adj} than general web searches.",
    "We keep a list of {adj} {resource} that is updated every semester.",
    "Feel free to {action} the materials and contact us again with follow-up questions.",
    "Printed guides near the {place} summarize the most {adj} {resource}.",
    "Several {resource} from that period were published by local historical societies.",
    "The university press has released {adj} books that touch on this topic.",
    "I have included a few starting points below so you can {action} them {time}.",
)

_CLOSERS = (
    "Please let me know if there is anything else I can do.",
    "I hope this information proves useful.",
    "Do not hesitate to reach out again if you need more assistance.",
    "I look forward to hearing how your search goes.",
)


class MockTransport:
    """Deterministic stand-in for a chat model with a known bias profile.

    ``null_bias`` ignores every demographic attribute. ``dear_sex_bias``
    opens with "Dear <first name>," at a sex-dependent rate and is otherwise
    identical to ``null_bias``. ``role_accommodation`` varies the closing
    word and adds a research sentence at patron-type dependent rates.
    Every request draws from a generator keyed on (rng_seed, run_seed,
    index), so concurrent use is reproducible.
    """

    def __init__(self, profile: str, rng_seed: int = 0):
        if profile not in MOCK_PROFILES:
            raise ConfigurationError(f"unknown mock profile {profile!r}")
        self.profile = profile
        self.rng_seed = int(rng_seed)

    def __call__(self, request: ChatRequest) -> str:
        rng = np.random.default_rng([self.rng_seed, int(request.run_seed), int(request.index)])
        return self.respond(request.query, rng)

    def respond(self, query: ReferenceQuery, rng: np.random.Generator) -> str:
        patron = query.patron
        dear_rate = DEAR_RATES[patron.sex] if self.profile == "dear_sex_bias" else NULL_DEAR_RATE
        if rng.random() < dear_rate:
            greeting = f"Dear {patron.first_name},"
        else:
            greeting = _pick(_NEUTRAL_GREETINGS, rng)

        inst = query.institution
        slots = {"collection_topic": inst.collection_topic, "team_name": inst.team_name,
                 "university": inst.university, "city": inst.city}
        sentences = [_pick(_OPENERS[query.template_id], rng).format(**slots), *_BOILERPLATE]
        n_fill = int(rng.integers(*FILLER_SENTENCES))
        for j in rng.choice(len(_BODY), size=n_fill, replace=False):
            sentences.append(_fill(_BODY[int(j)], rng))

        if self.profile == "role_accommodation":
            if rng.random() < ROLE_RESEARCH_RATES[patron.patron_type]:
                sentences.insert(int(rng.integers(1, len(sentences) + 1)), _RESEARCH_SENTENCE)
            closing = "Regards," if rng.random() < ROLE_REGARDS_RATES[patron.patron_type] else "Thanks,"
        else:
            closing = _pick(_NEUTRAL_CLOSINGS, rng)
        sentences.append(_pick(_CLOSERS, rng))

        paragraphs = []
        cut = [0, 1 + len(sentences) // 3, 1 + 2 * len(sentences) // 3, len(sentences)]
        for a, b in zip(cut, cut[1:]):
            if b > a:
                paragraphs.append(" ".join(sentences[a:b]))
        body = "\n\n".join(paragraphs)
        return f"{greeting}\n\n{body}\n\n{closing}\nReference Services\n{inst.library_name}"


def _pick(options: Sequence[str], rng: np.random.Generator) -> str:
    return options[int(rng.integers(len(options)))]


def _fill(template: str, rng: np.random.Generator) -> str:
    out = template
    for slot, words in _WORDS.items():
        token = "{" + slot + "}"
        while token in out:
            out = out.replace(token, _pick(words, rng), 1)
    return out


def mock_generator(profile: str, rng_seed: int = 0) -> MockTransport:
    return MockTransport(profile, rng_seed)


def transport_from_spec(spec: str, config: GenerationConfig) -> Transport:
    """``mock:<profile>[:seed]`` or ``http`` (endpoint taken from the config)."""
    if spec.startswith("mock:"):
        parts = spec.split(":")
        seed = int(parts[2]) if len(parts) > 2 else 0
        return mock_generator(parts[1], seed)
    if spec == "http":
        return HttpTransport.from_config(config)
    raise ConfigurationError(f"unknown transport {spec!r}")


assert set(ROLE_REGARDS_RATES) == set(PATRON_TYPES) == set(ROLE_RESEARCH_RATES)
