"""Target-oriented text guidance.

A motion description of the driving clip and an appearance description
of the reference are fused into one prompt that puts the reference
subject in the driving action. Descriptions come from a pluggable
client: an HTTP language-model service, a recorded-fixture replayer, or
the offline template client.

Template grammar (byte-stable):

* motion:     ``MOTION_PHRASES[family]``, else ``"a figure is moving"``
* appearance: ``"a {color} stick figure"``, else ``"a stick figure"``
* fusion:     ``appearance + ", " + rephrase(motion)`` where ``rephrase``
  drops the motion sentence's subject up to its first ``" is "``
  (``"a person is waving both hands"`` -> ``"is waving both hands"``).

HTTP contract: ``POST {endpoint}`` with JSON ``{"model", "task", "text",
"frames"}`` (``task`` in motion/appearance/fuse; ``frames`` is a list of
base64 PNGs) and ``Authorization: Bearer $TOKEN`` when the configured
environment variable is set. The response is ``{"text": "..."}``.
Responses are cached on disk under ``cache_dir/<h[:2]>/<h>.json`` where
``h`` is the SHA-256 of the canonical request JSON.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from PIL import Image

from .backbone.text import ByteTextEncoder, TextTokens
from .errors import GuidanceError, ParameterError

logger = logging.getLogger(__name__)

MOTION_PHRASES = {
    "wave": "a figure is waving its arm",
    "walk": "a figure is walking in place",
    "bounce": "a figure is bouncing up and down",
}
DEFAULT_MOTION = "a figure is moving"
NUM_MOTION_FRAMES = 8


@dataclass(frozen=True)
class PromptBundle:
    motion_text: str
    appearance_text: str
    fused_text: str
    provenance: str


@dataclass(frozen=True)
class GuidanceClientConfig:
    endpoint: str = "http://localhost:8080/v1/describe"
    token_env: str = "ICANIM_GUIDANCE_TOKEN"
    timeout: float = 30.0
    retries: int = 2
    model: str = "gemini-2.5"
    max_in_flight: int = 4
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ParameterError(f"timeout must be > 0, got {self.timeout}")
        if self.retries < 0 or self.max_in_flight < 1:
            raise ParameterError("retries must be >= 0 and max_in_flight >= 1")


class GuidanceClient(Protocol):
    name: str

    def complete(self, request: dict) -> str: ...


def request_key(request: dict) -> str:
    return hashlib.sha256(json.dumps(request, sort_keys=True).encode()).hexdigest()


def encode_frame(frame: np.ndarray) -> str:
    arr = np.asarray(frame)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0, 1) * 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def sample_frames(frames: np.ndarray, n: int = NUM_MOTION_FRAMES) -> np.ndarray:
    """``n`` evenly spaced frames (all of them if the clip is shorter)."""
    T = len(frames)
    if T < 1:
        raise ParameterError("need at least one frame")
    idx = np.unique(np.linspace(0, T - 1, min(n, T)).round().astype(int))
    return np.asarray(frames)[idx]


def _post_requests(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


class HttpGuidanceClient:
    """Language-model service client with retries, in-flight cap and disk cache."""

    def __init__(
        self,
        cfg: GuidanceClientConfig,
        transport: Callable[[str, dict, dict, float], dict] = _post_requests,
    ):
        self.cfg = cfg
        self.name = f"http:{cfg.model}"
        self._transport = transport
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def _cache_path(self, key: str) -> Path | None:
        if not self.cfg.cache_dir:
            return None
        return Path(self.cfg.cache_dir) / key[:2] / f"{key}.json"

    def complete(self, request: dict) -> str:
        payload = {"model": self.cfg.model, **request}
        key = request_key(payload)
        cached = self._cache_path(key)
        if cached is not None and cached.is_file():
            return json.loads(cached.read_text())["text"]
        headers = {}
        token = os.environ.get(self.cfg.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last: Exception | None = None
        for attempt in range(self.cfg.retries + 1):
            try:
                with self._slots:
                    body = self._transport(self.cfg.endpoint, payload, headers, self.cfg.timeout)
                text = body.get("text") if isinstance(body, dict) else None
                if not isinstance(text, str) or not text.strip():
                    raise GuidanceError("service returned an empty description", attempt)
                if cached is not None:
                    cached.parent.mkdir(parents=True, exist_ok=True)
                    cached.write_text(json.dumps({"text": text}))
                return text
            except GuidanceError:
                raise
            except Exception as e:  # transport failures are retried
                last = e
                logger.warning("guidance request failed (attempt %d): %s", attempt + 1, e)
                if attempt < self.cfg.retries:
                    time.sleep(min(0.05 * 2**attempt, 1.0))
        raise GuidanceError(f"guidance service unavailable: {last!r}", self.cfg.retries)


class FixtureClient:
    """Replays recorded responses keyed by request hash."""

    name = "fixture"

    def __init__(self, responses: dict[str, str] | str | Path):
        if not isinstance(responses, dict):
            responses = json.loads(Path(responses).read_text())
        self.responses = dict(responses)

    def complete(self, request: dict) -> str:
        key = request_key(request)
        if key not in self.responses:
            raise GuidanceError(f"no recorded response for request {key[:12]}")
        text = self.responses[key]
        if not text.strip():
            raise GuidanceError("recorded response is empty")
        return text


class RecordingClient:
    """Wraps another client and records its responses for later replay."""

    def __init__(self, inner: GuidanceClient):
        self.inner = inner
        self.name = f"recording:{inner.name}"
        self.responses: dict[str, str] = {}

    def complete(self, request: dict) -> str:
        text = self.inner.complete(request)
        self.responses[request_key(request)] = text
        return text

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.responses, indent=1, sort_keys=True))


def rephrase_motion(motion: str) -> str:
    head, sep, tail = motion.partition(" is ")
    return f"is {tail}" if sep else motion


class TemplateClient:
    """Offline, deterministic descriptions driven by tags."""

    name = "template"

    def complete(self, request: dict) -> str:
        task = request.get("task")
        hint = request.get("hint")
        if task == "motion":
            return MOTION_PHRASES.get(hint, DEFAULT_MOTION)
        if task == "appearance":
            return f"a {hint} stick figure" if hint else "a stick figure"
        if task == "fuse":
            return f"{request['appearance']}, {rephrase_motion(request['motion'])}"
        raise ParameterError(f"unknown guidance task {task!r}")


TEMPLATE = TemplateClient()


def _run(request: dict, client: GuidanceClient | None, degrade: bool) -> tuple[str, str]:
    """(text, provenance) from ``client``, falling back to templates if allowed."""
    if client is None or isinstance(client, TemplateClient):
        return TEMPLATE.complete(request), "template"
    remote = {k: v for k, v in request.items() if k != "hint"}
    try:
        text = client.complete(remote)
    except GuidanceError:
        if not degrade:
            raise
        logger.warning("guidance failed, using template fallback")
        return TEMPLATE.complete(request), "template"
    if not text.strip():
        if not degrade:
            raise GuidanceError("empty description")
        return TEMPLATE.complete(request), "template"
    return text.strip(), client.name


def describe_motion(
    frames: np.ndarray,
    client: GuidanceClient | None = None,
    hint: str | None = None,
    degrade: bool = False,
) -> str:
    """One sentence describing the action in a driving clip."""
    picked = sample_frames(frames)
    req = {"task": "motion", "frames": [encode_frame(f) for f in picked], "hint": hint}
    return _run(req, client, degrade)[0]


def describe_appearance(
    image: np.ndarray,
    client: GuidanceClient | None = None,
    hint: str | None = None,
    degrade: bool = False,
) -> str:
    """One phrase describing the reference subject."""
    if hint is None and (client is None or isinstance(client, TemplateClient)):
        from .skeleton.sprites import dominant_color_name

        hint = dominant_color_name(image)
    req = {"task": "appearance", "frames": [encode_frame(image)], "hint": hint}
    return _run(req, client, degrade)[0]


def fuse_prompt(motion: str, appearance: str, client: GuidanceClient | None = None,
                degrade: bool = False) -> str:
    if not motion.strip() or not appearance.strip():
        raise ParameterError("both motion and appearance descriptions are required")
    req = {"task": "fuse", "motion": motion, "appearance": appearance}
    return _run(req, client, degrade)[0]


class PromptCache:
    """Fused prompts cached per (driving clip, reference) content pair."""

    def __init__(self, client: GuidanceClient | None = None, degrade: bool = True):
        self.client = client
        self.degrade = degrade
        self._store: dict[tuple[str, str], PromptBundle] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(a: np.ndarray) -> str:
        return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()

    def get(
        self,
        driving: np.ndarray,
        reference: np.ndarray,
        motion_hint: str | None = None,
        appearance_hint: str | None = None,
    ) -> PromptBundle:
        key = (self._key(driving), self._key(reference))
        with self._lock:
            if key in self._store:
                return self._store[key]
        bundle = build_prompt(driving, reference, self.client, motion_hint, appearance_hint, self.degrade)
        with self._lock:
            self._store[key] = bundle
        return bundle


def build_prompt(
    driving: np.ndarray,
    reference: np.ndarray,
    client: GuidanceClient | None = None,
    motion_hint: str | None = None,
    appearance_hint: str | None = None,
    degrade: bool = True,
) -> PromptBundle:
    m_req = {"task": "motion", "frames": [encode_frame(f) for f in sample_frames(driving)],
             "hint": motion_hint}
    if appearance_hint is None and (client is None or isinstance(client, TemplateClient)):
        from .skeleton.sprites import dominant_color_name

        appearance_hint = dominant_color_name(reference)
    a_req = {"task": "appearance", "frames": [encode_frame(reference)], "hint": appearance_hint}
    motion, p1 = _run(m_req, client, degrade)
    appearance, p2 = _run(a_req, client, degrade)
    fused, p3 = _run({"task": "fuse", "motion": motion, "appearance": appearance}, client, degrade)
    prov = p1 if p1 == p2 == p3 else "mixed"
    return PromptBundle(motion, appearance, fused, prov)


def embed_text(text: str, encoder: ByteTextEncoder) -> TextTokens:
    """Embed a fused prompt with the backbone's frozen text encoder."""
    return encoder([text])
