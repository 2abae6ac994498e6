"""Pydantic request/response models for the selection service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class MetricSpec(BaseModel):
    kind: str = "bm25"
    terms: str = "unigram"
    k1: float = 1.5
    b: float = 0.75
    idf_weights: bool = False
    candidate_text: str = "input_only"


class SelectRequest(BaseModel):
    """Query by test_id (instance known to the service) or by raw
    input_text (term-based metrics only); exactly one must be given."""

    test_id: Optional[str] = None
    input_text: Optional[str] = None
    metric: MetricSpec = Field(default_factory=MetricSpec)
    selector: str = "set_greedy"
    k: int = 8


class DemoModel(BaseModel):
    id: str
    input: str
    output: str


class SelectResponse(BaseModel):
    test_id: str
    metric_name: str
    demo_ids: list[str]
    instance_scores: Optional[list[float]] = None
    set_score: Optional[float] = None
    demos: list[DemoModel]


class TemplateSpec(BaseModel):
    input_pattern: str = "Input: {input}"
    output_pattern: str = "Output: {output}"
    separator: str = "\n\n"


class BudgetSpec(BaseModel):
    max_units: int
    counter: str = "whitespace_tokens"


class PromptRequest(SelectRequest):
    ordering: Optional[str] = None
    template: TemplateSpec = Field(default_factory=TemplateSpec)
    budget: Optional[BudgetSpec] = None


class PromptResponse(BaseModel):
    test_id: str
    metric_name: str
    prompt: str
    demo_ids: list[str]  # prompt order, cue-adjacent last


class CoverageRequest(BaseModel):
    test_id: Optional[str] = None
    input_text: Optional[str] = None
    demo_ids: list[str]
    schemes: list[str] = Field(default_factory=lambda: ["unigram"])


class CoverageResponse(BaseModel):
    test_id: str
    recalls: dict[str, float]


class HealthResponse(BaseModel):
    status: str
    pool_size: int
    test_size: int
    has_embeddings: bool
    has_parses: bool
