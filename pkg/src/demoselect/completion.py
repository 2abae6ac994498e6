"""Optional client that sends rendered prompts to a completions endpoint.

Wire format is the generic JSON completions shape: request
{"model", "prompt", "max_tokens", "temperature"}; response
{"choices": [{"text": ...}]}. Any compatible server works. Nothing in the
selection pipeline depends on this module.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import httpx

from .corpus import iter_jsonl
from .errors import ConfigError, DataError

API_KEY_ENV = "DEMOSELECT_API_KEY"
RETRYABLE_STATUS = (429, 500, 502, 503, 504)


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to send prompts."""

    url: str
    model: str
    max_tokens: int = 256
    temperature: float = 0.0
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    api_key_env: str = API_KEY_ENV

    def __post_init__(self) -> None:
        if not self.url:
            raise ConfigError("endpoint url must be non-empty")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")


def _headers(config: EndpointConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(config.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _extract_text(payload: dict, url: str) -> str:
    choices = payload.get("choices")
    if not isinstance(choices, list) or not choices:
        raise DataError(f"malformed response from {url}: missing choices")
    first = choices[0]
    if not isinstance(first, dict) or not isinstance(first.get("text"), str):
        raise DataError(f"malformed response from {url}: choices[0].text missing")
    return first["text"]


def complete_one(
    client: httpx.Client,
    prompt: str,
    config: EndpointConfig,
) -> str:
    """One prompt through the endpoint, retrying retryable failures with
    exponential backoff."""
    body = {
        "model": config.model,
        "prompt": prompt,
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
    }
    last_error: Optional[str] = None
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(config.backoff_base_s * (2 ** (attempt - 1)))
        try:
            resp = client.post(config.url, json=body, headers=_headers(config),
                               timeout=config.timeout_s)
        except httpx.HTTPError as exc:
            last_error = f"transport error: {exc}"
            continue
        if resp.status_code in RETRYABLE_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise DataError(f"endpoint {config.url} returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed response from {config.url}: {exc}") from exc
        return _extract_text(payload, config.url)
    raise DataError(
        f"endpoint {config.url} unreachable after {config.max_retries + 1} attempts "
        f"({last_error})"
    )


def complete_prompts(
    prompts_path: Union[str, Path],
    out_path: Union[str, Path],
    config: EndpointConfig,
    transport: Optional[httpx.BaseTransport] = None,
) -> int:
    """Send every prompt in prompts.jsonl; write predictions.jsonl
    ({"test_id", "prediction"}) atomically. Returns the prediction count.

    transport is an injection point for tests (httpx.MockTransport).
    """
    rows = []
    for lineno, row in iter_jsonl(prompts_path):
        if "test_id" not in row or "prompt" not in row:
            raise DataError(f"{prompts_path}: line {lineno}: need test_id and prompt")
        rows.append(row)

    out_path = Path(out_path)
    tmp = out_path.with_name(out_path.name + ".tmp")
    try:
        with httpx.Client(transport=transport) as client, \
                open(tmp, "w", encoding="utf-8") as fh:
            for row in rows:
                text = complete_one(client, row["prompt"], config)
                fh.write(json.dumps(
                    {"test_id": row["test_id"], "prediction": text},
                    ensure_ascii=False, separators=(",", ":"),
                ))
                fh.write("\n")
        os.replace(tmp, out_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return len(rows)
