"""Zero-shot instruction generation: prompt templating, the trainable
vision-to-language projection, and pluggable language-model backends.

Two backends exist. The stub verbalizes image statistics deterministically,
keeping the whole pipeline offline and reproducible. The remote backend
talks to a chat-completions HTTP endpoint; since a text API cannot ingest
the projected image embedding directly, an 8-value digest of it is inlined
into the prompt.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import BackendError, ConfigError, InputError
from .nn import Linear, Module
from .tensor import Tensor

PROMPT_TEMPLATE = ("Please analyze the given {instance} {modality} image and give as much "
                   "important information in such a {modality} for segmenting {instance} as you can.")

SYSTEM_ROLE = "You are a helpful healthcare virtual assistant."

STUB_TEMPLATE = ("Analysis of {modality} for {instance}: mean intensity {mu:.3f}, contrast "
                 "{sigma:.3f}, edge density {rho:.3f}; prioritize high-gradient boundary "
                 "regions for {instance} segmentation.")


def render_prompt(instance: str, modality: str) -> str:
    """Fill the fixed analysis-request template; both fields must be non-empty."""
    if not instance or not instance.strip():
        raise InputError("prompt instance must be non-empty")
    if not modality or not modality.strip():
        raise InputError("prompt modality must be non-empty")
    return PROMPT_TEMPLATE.format(instance=instance, modality=modality)


@dataclass
class PromptTemplate:
    instance: str
    modality: str

    def render(self) -> str:
        return render_prompt(self.instance, self.modality)


@dataclass
class InstructionRecord:
    """One generated instruction for a (subject, modality) pair."""

    modality: str
    prompt: str
    instruction_text: str
    embedding: Tensor | None = None  # filled by the text encoder before decoding


class VlmToLlmProjection(Module):
    """Trainable two-layer projection from the vision-language width to the LLM width."""

    def __init__(self, text_dim: int, llm_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(text_dim, llm_dim, rng, dtype=dtype)
        self.fc2 = Linear(llm_dim, llm_dim, rng, dtype=dtype)

    def __call__(self, v: Tensor) -> Tensor:
        return self.fc2(self.fc1(v).gelu())


def project_vlm(projection: VlmToLlmProjection, v: Tensor) -> Tensor:
    return projection(v)


def image_stats(image: np.ndarray) -> tuple[float, float, float]:
    """(mean, std, mean gradient magnitude) of a 2-d image."""
    img = np.asarray(image, dtype=np.float64)
    mu = float(img.mean())
    sigma = float(img.std())
    gy, gx = np.gradient(img)
    rho = float(np.sqrt(gx * gx + gy * gy).mean())
    return mu, sigma, rho


def embedding_digest(projected: Tensor | np.ndarray, k: int = 8) -> str:
    """Compress a projected embedding into a bracketed k-value token for text APIs."""
    vec = (projected.data if isinstance(projected, Tensor) else np.asarray(projected)).reshape(-1)
    chunks = np.array_split(vec, k)
    vals = " ".join(f"{float(c.mean()):.3f}" for c in chunks)
    return f"[IMG {vals}]"


class StubLlmBackend:
    """Deterministic statistics-verbalizer standing in for a frozen chat model.

    Holds no trainable parameters; also exposes the tokenizer/detokenizer pair
    so the round-trip contract can be exercised offline.
    """

    kind = "stub"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, image: np.ndarray, instance: str, modality: str,
                 prompt: str, projected=None) -> str:
        mu, sigma, rho = image_stats(image)
        return STUB_TEMPLATE.format(modality=modality, instance=instance,
                                    mu=mu, sigma=sigma, rho=rho)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        words = text.split()
        if not words:
            raise InputError("cannot tokenize empty text")
        return words

    @staticmethod
    def detokenize(tokens: list[str]) -> str:
        return " ".join(tokens)


class RemoteLlmBackend:
    """Chat-completions HTTP client with bounded exponential-backoff retries."""

    kind = "remote"

    def __init__(self, url: str | None = None, model: str | None = None,
                 api_key: str | None = None, timeout: float = 30.0,
                 path: str = "/v1/chat/completions", retries: int = 3,
                 backoff: tuple = (1.0, 2.0, 4.0)):
        self.url = url or os.environ.get("ZEUS_LLM_URL")
        self.model = model or os.environ.get("ZEUS_LLM_MODEL", "default")
        self.api_key = api_key or os.environ.get("ZEUS_LLM_KEY")
        self.timeout = timeout
        self.path = path
        self.retries = retries
        self.backoff = backoff
        if not self.url:
            raise ConfigError("remote backend needs a URL (argument or ZEUS_LLM_URL)")

    def _endpoint(self) -> str:
        return self.url.rstrip("/") + self.path

    def generate(self, image: np.ndarray, instance: str, modality: str,
                 prompt: str, projected=None) -> str:
        digest = embedding_digest(projected) if projected is not None else ""
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": SYSTEM_ROLE},
                {"role": "user", "content": f"###Doctor: {digest}{prompt} ###Assistant:"},
            ],
            "temperature": 0,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(self._endpoint(), json=body, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                if not content or not content.strip():
                    raise BackendError("remote backend returned an empty completion",
                                       attempts=attempt + 1)
                return content.strip()
            except BackendError:
                raise
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        raise BackendError(f"remote backend failed after {self.retries} attempts: {last_error}",
                           attempts=self.retries)


def make_backend(kind: str = "stub", **kwargs):
    if kind == "stub":
        return StubLlmBackend(seed=kwargs.get("seed", 0))
    if kind == "remote":
        return RemoteLlmBackend(**{k: v for k, v in kwargs.items() if k != "seed"})
    raise ConfigError(f"unknown backend kind {kind!r}")


def generate_instruction(image: np.ndarray, instance: str, modality: str,
                         backend, projected=None) -> InstructionRecord:
    """Render the prompt, query the backend, and wrap the result.

    The embedding field stays None here; the pipeline fills it via the text
    encoder before any decoding.
    """
    prompt = render_prompt(instance, modality)
    text = backend.generate(image, instance, modality, prompt, projected=projected)
    if not text or not text.strip():
        raise BackendError("backend produced an empty instruction")
    return InstructionRecord(modality=modality, prompt=prompt, instruction_text=text)


def tokenize_detokenize_roundtrip(text: str, backend) -> str:
    """detokenize(tokenize(text)); exact up to whitespace normalization (stub only)."""
    if getattr(backend, "kind", None) != "stub":
        raise InputError("token streams are only exposed by the stub backend")
    return backend.detokenize(backend.tokenize(text))
