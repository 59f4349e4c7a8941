"""Adapter configuration: listen address, engine choices, request limits."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

# A renormalized page from the extraction pipeline (1600px long side,
# grayscale PNG, base64) stays well under this; the limit must never be
# tightened below it.
MIN_REQUEST_BYTES = 4 * 1024 * 1024


class OcrEngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    engine: str = "finparse_adapter.engines:BlobOcrEngine"
    languages: list[str] = Field(default_factory=lambda: ["en", "zh", "id"])
    options: dict = Field(default_factory=dict)


class VlmEngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    engine: str = "finparse_adapter.engines:NullVlmEngine"
    upstream_endpoint: Optional[str] = None
    max_tokens_cap: int = 2048
    options: dict = Field(default_factory=dict)


class AdapterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    host: str = "127.0.0.1"
    port: int = 8800
    max_request_bytes: int = 32 * 1024 * 1024
    max_concurrent_requests: int = 8
    retry_after_s: int = 1
    ocr: OcrEngineConfig = Field(default_factory=OcrEngineConfig)
    vlm: VlmEngineConfig = Field(default_factory=VlmEngineConfig)

    @model_validator(mode="after")
    def _check_limits(self):
        if self.max_request_bytes < MIN_REQUEST_BYTES:
            raise ValueError(
                f"max_request_bytes must be >= {MIN_REQUEST_BYTES} "
                "(a renormalized page payload must fit)"
            )
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        return self


def load_config(path: Optional[str | Path] = None) -> AdapterConfig:
    if path is None:
        return AdapterConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return AdapterConfig.model_validate(raw)
