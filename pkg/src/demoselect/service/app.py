"""FastAPI application exposing per-query selection over a loaded bundle.

The bundle (pool, optional test split, embeddings, parses) is loaded once
at app creation; scorers are cached per metric configuration. Batch,
file-oriented work stays in the CLI; this service answers one query at a
time.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..corpus import Instance, load_embeddings, load_parses, load_pool
from ..errors import ConfigError, DataError
from ..harness import bag_for, metric_from_obj, substructure_recall
from ..promptkit import (
    BudgetPolicy,
    PromptTemplate,
    fit_budget,
    order_for_prompt,
    render_prompt,
)
from ..relevance import MetricConfig, Scorer, rank_independent
from ..setcover import decompose, greedy_select
from ..corpus import Selection
from ..terms import TermScheme
from .schemas import (
    CoverageRequest,
    CoverageResponse,
    DemoModel,
    HealthResponse,
    PromptRequest,
    PromptResponse,
    SelectRequest,
    SelectResponse,
)

QUERY_ID = "_query"


@dataclass(frozen=True)
class ServiceConfig:
    pool_path: str
    test_path: Optional[str] = None
    embeddings_dir: Optional[str] = None
    parses_path: Optional[str] = None


def create_app(config: ServiceConfig) -> FastAPI:
    pool = load_pool(config.pool_path)
    test = load_pool(config.test_path) if config.test_path else None
    store = load_embeddings(config.embeddings_dir) if config.embeddings_dir else None
    parses = load_parses(config.parses_path) if config.parses_path else None

    scorers: dict[MetricConfig, Scorer] = {}
    lock = threading.Lock()

    def scorer_for(metric: MetricConfig) -> Scorer:
        with lock:
            scorer = scorers.get(metric)
            if scorer is None:
                scorer = Scorer(pool, metric, store=store, parses=parses)
                scorers[metric] = scorer
        return scorer

    def resolve_instance(test_id: Optional[str], input_text: Optional[str]) -> Instance:
        if (test_id is None) == (input_text is None):
            raise ConfigError("give exactly one of test_id or input_text")
        if test_id is not None:
            if test is not None and test_id in test:
                return test.get(test_id)
            if test_id in pool:
                return pool.get(test_id)
            raise HTTPException(status_code=404, detail=f"unknown test id {test_id!r}")
        return Instance(id=QUERY_ID, input=input_text, output="")

    def run_select(req: SelectRequest) -> Selection:
        metric = metric_from_obj(req.metric.model_dump())
        x = resolve_instance(req.test_id, req.input_text)
        if x.id == QUERY_ID and (metric.needs_embeddings or metric.needs_parses):
            raise ConfigError(
                f"raw input_text queries only work with term-based metrics; "
                f"{metric.name} needs precomputed artifacts, query by test_id"
            )
        scorer = scorer_for(metric)
        if req.selector == "independent":
            ranked = rank_independent(x, pool, scorer, req.k)
            return Selection(
                test_id=x.id,
                demo_ids=tuple(sc.id for sc in ranked),
                instance_scores=tuple(sc.score for sc in ranked),
                metric_name=metric.name,
            )
        if req.selector == "set_greedy":
            return greedy_select(decompose(x, scorer), req.k)
        raise ConfigError(
            f"unknown selector {req.selector!r}; use independent or set_greedy"
        )

    app = FastAPI(title="demoselect", version="1.0.0")

    @app.exception_handler(DataError)
    async def _data_error(_request: Request, exc: DataError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ConfigError)
    async def _config_error(_request: Request, exc: ConfigError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            pool_size=len(pool),
            test_size=len(test) if test is not None else 0,
            has_embeddings=store is not None,
            has_parses=parses is not None,
        )

    @app.post("/select", response_model=SelectResponse)
    def select(req: SelectRequest) -> SelectResponse:
        sel = run_select(req)
        return SelectResponse(
            test_id=sel.test_id,
            metric_name=sel.metric_name,
            demo_ids=list(sel.demo_ids),
            instance_scores=list(sel.instance_scores) if sel.instance_scores else None,
            set_score=sel.set_score,
            demos=[
                DemoModel(id=d, input=pool.get(d).input, output=pool.get(d).output)
                for d in sel.demo_ids
            ],
        )

    @app.post("/prompt", response_model=PromptResponse)
    def prompt(req: PromptRequest) -> PromptResponse:
        sel = run_select(req)
        x = resolve_instance(req.test_id, req.input_text)
        ordering = req.ordering or "by_instance_score"
        ordered = order_for_prompt(sel, ordering)
        template = PromptTemplate(
            req.template.input_pattern,
            req.template.output_pattern,
            req.template.separator,
        )
        if req.budget is not None:
            policy = BudgetPolicy(req.budget.max_units, req.budget.counter)
            ordered = fit_budget(ordered, pool, template, x.input, policy)
        return PromptResponse(
            test_id=sel.test_id,
            metric_name=sel.metric_name,
            prompt=render_prompt(ordered, pool, template, x.input),
            demo_ids=ordered,
        )

    @app.post("/coverage", response_model=CoverageResponse)
    def coverage(req: CoverageRequest) -> CoverageResponse:
        x = resolve_instance(req.test_id, req.input_text)
        if not req.demo_ids:
            raise ConfigError("demo_ids must be non-empty")
        if not req.schemes:
            raise ConfigError("schemes must be non-empty")
        recalls = {}
        for raw in req.schemes:
            scheme = TermScheme.parse(raw)
            test_bag = bag_for(scheme, x, parses)
            demo_bags = [bag_for(scheme, pool.get(d), parses) for d in req.demo_ids]
            recalls[str(scheme)] = substructure_recall(test_bag, demo_bags)
        return CoverageResponse(test_id=x.id, recalls=recalls)

    return app
