"""Text-emitting policies.

Every policy maps ``(Observation, instruction)`` to a :class:`PolicyOutput`
holding raw text that is *meant* to parse as ``H * D`` integers. Nothing here
guarantees that; the parser and the hold fallback downstream are the safety net.

* :class:`OraclePolicy` plans with the scripted controller and encodes the plan.
* :class:`NearestNeighborPolicy` replays the demo chunk whose state is closest
  to the query, optionally passed through a corruption model.
* :class:`RemotePolicy` asks a chat-completion endpoint.
"""

from __future__ import annotations

import asyncio
import os
import time
import zlib
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import httpx
import numpy as np

from .codec import CodecConfig, encode_chunk
from .data import Episode
from .prompting import Layout, PromptBundle, build_prompt, image_data_url
from .simenv import make_env, plan_chunk, window_actions

API_KEY_ENV = "ACTIONTEXT_API_KEY"


@dataclass
class Observation:
    state: np.ndarray
    images: list[np.ndarray] = field(default_factory=list)
    timestep: int = 0
    sim_state: Any = None  # privileged simulator state, only the oracle reads it

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        if not np.all(np.isfinite(self.state)):
            raise ValueError("observation state must be finite")
        if self.timestep < 0:
            raise ValueError("timestep must be >= 0")


@dataclass
class PolicyOutput:
    raw_text: str
    latency_ms: float = 0.0


class Policy(Protocol):
    def act(self, obs: Observation, instruction: str) -> PolicyOutput: ...


@dataclass(frozen=True)
class CorruptionConfig:
    drop_token_prob: float = 0.0
    perturb_digit_prob: float = 0.0
    garbage_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_token_prob", "perturb_digit_prob", "garbage_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    @property
    def active(self) -> bool:
        return self.drop_token_prob > 0 or self.perturb_digit_prob > 0 or self.garbage_prob > 0


_GARBAGE = (
    "I am unable to determine the action.",
    "The robot should move the arm.",
    "```json\n{\"action\": null}\n```",
    "NaN NaN NaN",
    "move left then grasp",
)


def corrupt_text(text: str, cfg: CorruptionConfig, rng: np.random.Generator) -> str:
    if rng.random() < cfg.garbage_prob:
        return _GARBAGE[int(rng.integers(len(_GARBAGE)))]
    tokens = [t for t in text.split(" ") if rng.random() >= cfg.drop_token_prob]
    out = []
    for tok in tokens:
        chars = list(tok)
        for i, ch in enumerate(chars):
            if ch.isdigit() and rng.random() < cfg.perturb_digit_prob:
                chars[i] = str(int(rng.integers(10)))
        out.append("".join(chars))
    return " ".join(out)


def observation_rng(seed: int, obs: Observation) -> np.random.Generator:
    # keyed on the query itself so the policy stays a pure function of its inputs
    key = zlib.crc32(np.ascontiguousarray(obs.state, dtype=np.float64).tobytes())
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(obs.timestep), key])


class OraclePolicy:
    """Plans ``H`` steps with the env's scripted controller and emits them as text."""

    def __init__(self, env, codec: CodecConfig):
        self.env = make_env(env) if isinstance(env, str) else env
        self.codec = codec

    def act(self, obs: Observation, instruction: str = "") -> PolicyOutput:
        if obs.sim_state is None:
            raise ValueError("the oracle needs the simulator state on the observation")
        start = time.perf_counter()
        text = encode_chunk(plan_chunk(self.env, obs.sim_state, self.codec.horizon), self.codec)
        return PolicyOutput(text, (time.perf_counter() - start) * 1e3)


class NearestNeighborPolicy:
    """Memorizes ``(state, next H actions as text)`` pairs from demonstrations.

    Lookup is Euclidean on the observation state; ties go to the lowest stored
    index. Read-only after :meth:`fit`.
    """

    def __init__(self, codec: CodecConfig, corruption: CorruptionConfig | None = None):
        self.codec = codec
        self.corruption = corruption or CorruptionConfig()
        self.states: np.ndarray | None = None
        self.texts: list[str] = []

    def fit(self, demos: Sequence[Episode], env=None) -> "NearestNeighborPolicy":
        if len(demos) == 0:
            raise ValueError("cannot fit on an empty demonstration set")
        widths = {ep.states.shape[1] for ep in demos}
        if len(widths) != 1:
            raise ValueError(f"demonstrations disagree on state dimension: {sorted(widths)}")
        env = env or make_env(demos[0].env)
        H = self.codec.horizon
        states, texts = [], []
        for ep in demos:
            for k in range(len(ep)):
                states.append(ep.states[k])
                texts.append(encode_chunk(window_actions(env, ep, k, H), self.codec))
        self.states = np.array(states)
        self.texts = texts
        return self

    def nearest(self, state) -> int:
        if self.states is None:
            raise RuntimeError("policy is not fitted")
        d2 = np.sum((self.states - np.asarray(state)) ** 2, axis=1)
        return int(np.argmin(d2))  # first minimum wins ties

    def act(self, obs: Observation, instruction: str = "") -> PolicyOutput:
        start = time.perf_counter()
        text = self.texts[self.nearest(obs.state)]
        if self.corruption.active:
            text = corrupt_text(text, self.corruption, observation_rng(self.corruption.seed, obs))
        return PolicyOutput(text, (time.perf_counter() - start) * 1e3)


def nn_fit(demos: Sequence[Episode], codec: CodecConfig, corruption: CorruptionConfig | None = None) -> NearestNeighborPolicy:
    return NearestNeighborPolicy(codec, corruption).fit(demos)


# --------------------------------------------------------------------------
# remote chat-completion backend


@dataclass(frozen=True)
class RemoteEndpointConfig:
    base_url: str
    model: str = "default"
    timeout_ms: float = 10_000
    max_tokens: int = 512
    temperature: float = 0.0
    api_key: str | None = None

    def resolved_api_key(self) -> str | None:
        return self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV)

    @property
    def completions_url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


class BackendError(RuntimeError):
    kind = "backend_error"


class BackendTimeout(BackendError):
    kind = "timeout"


class BackendUnavailable(BackendError):
    kind = "transport"


class MalformedResponse(BackendError):
    kind = "malformed_response"


def build_chat_request(bundle: PromptBundle, endpoint: RemoteEndpointConfig) -> dict:
    user_parts: list[dict] = [{"type": "text", "text": bundle.instruction}]
    for image in bundle.images:
        user_parts.append({"type": "image_url", "image_url": {"url": image_data_url(image)}})
    return {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": bundle.system_prompt},
            {"role": "user", "content": user_parts},
        ],
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
    }


def extract_text(response: httpx.Response) -> str:
    if response.status_code >= 400:
        raise BackendUnavailable(f"backend returned HTTP {response.status_code}")
    try:
        payload = response.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"cannot read completion text: {exc!r}") from None
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise MalformedResponse(f"message content is {type(content).__name__}, not text")
    return content


def _headers(endpoint: RemoteEndpointConfig) -> dict:
    key = endpoint.resolved_api_key()
    return {"Authorization": f"Bearer {key}"} if key else {}


class RemoteClient:
    """Blocking chat-completion client. One request per call, independently timed."""

    def __init__(self, endpoint: RemoteEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=endpoint.timeout_ms / 1e3, transport=transport, headers=_headers(endpoint))

    def complete(self, bundle: PromptBundle) -> PolicyOutput:
        body = build_chat_request(bundle, self.endpoint)
        start = time.perf_counter()
        try:
            resp = self._client.post(self.endpoint.completions_url, json=body)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"no reply within {self.endpoint.timeout_ms} ms") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(str(exc) or type(exc).__name__) from exc
        latency = (time.perf_counter() - start) * 1e3
        return PolicyOutput(extract_text(resp), latency)

    def close(self) -> None:
        self._client.close()


class AsyncRemoteClient:
    def __init__(self, endpoint: RemoteEndpointConfig, transport: httpx.AsyncBaseTransport | None = None):
        self.endpoint = endpoint
        self._client = httpx.AsyncClient(
            timeout=endpoint.timeout_ms / 1e3, transport=transport, headers=_headers(endpoint)
        )

    async def complete(self, bundle: PromptBundle) -> PolicyOutput:
        body = build_chat_request(bundle, self.endpoint)
        start = time.perf_counter()
        try:
            # httpx timeouts are per phase; wait_for bounds the whole exchange
            resp = await asyncio.wait_for(
                self._client.post(self.endpoint.completions_url, json=body), self.endpoint.timeout_ms / 1e3
            )
        except (httpx.TimeoutException, asyncio.TimeoutError) as exc:
            raise BackendTimeout(f"no reply within {self.endpoint.timeout_ms} ms") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(str(exc) or type(exc).__name__) from exc
        latency = (time.perf_counter() - start) * 1e3
        return PolicyOutput(extract_text(resp), latency)

    async def aclose(self) -> None:
        await self._client.aclose()


class RemotePolicy:
    def __init__(
        self,
        endpoint: RemoteEndpointConfig,
        codec: CodecConfig,
        layout: Layout = Layout.SEPARATE,
        transport: httpx.BaseTransport | None = None,
    ):
        self.codec = codec
        self.layout = Layout(layout)
        self.client = RemoteClient(endpoint, transport)

    def act(self, obs: Observation, instruction: str) -> PolicyOutput:
        if not obs.images:
            raise ValueError("the remote policy needs at least one image")
        return self.client.complete(build_prompt(self.codec, instruction, obs.images, self.layout))


def remote_act(obs: Observation, instruction: str, endpoint: RemoteEndpointConfig, codec: CodecConfig, **kwargs) -> PolicyOutput:
    policy = RemotePolicy(endpoint, codec, **kwargs)
    try:
        return policy.act(obs, instruction)
    finally:
        policy.client.close()
