"""Shared HTTP plumbing for the OCR and VLM wire protocols.

Both protocols use the same status semantics: 200 success, 4xx protocol
error (no retry), 5xx or transport failure retryable. A Retry-After header
on a retryable response is honored before the next attempt.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

import requests

from .errors import ProtocolError, TransportError

_EXCERPT_LEN = 200


def _excerpt(text: str) -> str:
    return text[:_EXCERPT_LEN] + ("..." if len(text) > _EXCERPT_LEN else "")


def post_json(url: str, payload: dict, *, timeout_s: float, retries: int,
              semaphore: Optional[threading.Semaphore] = None,
              session: Optional[requests.Session] = None) -> dict:
    """POST JSON and return the decoded JSON body.

    Retries up to `retries` times on 5xx and transport errors with a short
    backoff (or the server's Retry-After). 4xx responses and undecodable
    bodies raise ProtocolError immediately.
    """
    post = (session or requests).post
    attempts = retries + 1
    last_exc: Optional[Exception] = None
    for attempt in range(attempts):
        if semaphore is not None:
            semaphore.acquire()
        try:
            try:
                resp = post(url, json=payload, timeout=timeout_s)
            except requests.RequestException as exc:
                last_exc = exc
                _backoff(attempt, None)
                continue
        finally:
            if semaphore is not None:
                semaphore.release()
        if 200 <= resp.status_code < 300:
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError(
                    f"{url}: non-JSON response body: {_excerpt(resp.text)}"
                ) from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"{url}: expected JSON object, got {_excerpt(resp.text)}")
            return body
        if 400 <= resp.status_code < 500:
            raise ProtocolError(
                f"{url}: status {resp.status_code}: {_excerpt(resp.text)}"
            )
        last_exc = TransportError(
            f"{url}: status {resp.status_code}: {_excerpt(resp.text)}"
        )
        _backoff(attempt, resp.headers.get("Retry-After"))
    raise TransportError(f"{url}: giving up after {attempts} attempts") from last_exc


def _backoff(attempt: int, retry_after: Optional[str]) -> None:
    delay = 0.1 * (2 ** attempt)
    if retry_after:
        try:
            delay = max(delay, float(retry_after))
        except ValueError:
            pass
    time.sleep(min(delay, 5.0))
