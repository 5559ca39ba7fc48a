"""HTTP service exposing parsing, exploration, model checking, simulation,
translation and translation checking.  The command-line tool is a client
of this app (in process by default, or over HTTP with ``--server``)."""

from __future__ import annotations

import time
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .analysis import QueryError, check, mean_csv, simulate_batch, summary_csv, trace_csv
from .codegen import UnsupportedTerm, emit_model, props_text
from .model import ModelError, Policy, validate_model
from .parser import DslSyntaxError, format_model, parse_model
from .statespace import ExploreLimits, build_mdp, mdp_to_json, stats

# status codes the client maps onto exit codes
DOMAIN_ERROR = 422
LIMIT_ERROR = 413


class ModelRequest(BaseModel):
    source: str = Field(description="model text in the PALPS modelling language")
    policy: bool = True


class Finding(BaseModel):
    severity: str
    message: str
    where: str = ""


class ParseResponse(BaseModel):
    ok: bool
    findings: list[Finding] = []
    canonical: Optional[str] = None


class ExploreRequest(ModelRequest):
    max_states: int = Field(1_000_000, gt=0)
    threads: int = Field(1, ge=1)
    dump: bool = False


class ExploreResponse(BaseModel):
    states: int
    choices: int
    transitions: int
    truncated: bool
    reason: str = ""
    seconds: float
    mdp: Optional[dict] = None


class CheckRequest(ExploreRequest):
    query: str


class CheckResponse(BaseModel):
    query: str
    value: float
    iterations: int
    converged: bool
    states: int


class SimulateRequest(ModelRequest):
    runs: int = Field(1, ge=1)
    ticks: int = Field(100, ge=0)
    seed: int = 0
    scheduler: Literal["uniform", "ordered"] = "uniform"
    threads: int = Field(1, ge=1)
    traces: bool = True


class SimulateResponse(BaseModel):
    runs: int
    deadlocks: int
    traces: list[str] = []
    summary_csv: str
    mean_csv: str


class TranslateRequest(ModelRequest):
    rewards: list[str] = []
    queries: list[str] = []


class TranslateResponse(BaseModel):
    nm: str
    props: Optional[str] = None


class VerifyRequest(ModelRequest):
    max_states: int = Field(200_000, gt=0)
    inject_fault: bool = False


class VerifyResponse(BaseModel):
    ok: bool
    palps_states: int
    gc_states: int
    stable_states: int
    mismatches: list[dict]
    counter_errors: list[dict] = []
    seconds: float


def _fail(status, kind, message, diagnostics=()):
    raise HTTPException(status, {"kind": kind, "message": message, "diagnostics": list(diagnostics)})


def _load(source: str):
    try:
        m = parse_model(source)
    except DslSyntaxError as exc:
        _fail(DOMAIN_ERROR, "syntax", "model does not parse", [str(d) for d in exc.diagnostics])
    report = validate_model(m)
    if not report.ok:
        _fail(DOMAIN_ERROR, "validation", "model is not valid", [str(f) for f in report.errors])
    return m


def _policy(m, on: bool):
    try:
        return m.policy() if on else Policy()
    except ModelError as exc:
        _fail(DOMAIN_ERROR, "policy", str(exc))


def _explore(m, req: ExploreRequest):
    mdp = build_mdp(m, _policy(m, req.policy), ExploreLimits(max_states=req.max_states), req.threads)
    return mdp


app = FastAPI(title="palps", version=__version__)


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/parse", response_model=ParseResponse)
def parse(req: ModelRequest):
    try:
        m = parse_model(req.source)
    except DslSyntaxError as exc:
        return ParseResponse(ok=False, findings=[Finding(severity="error", message=str(d)) for d in exc.diagnostics])
    report = validate_model(m)
    findings = [Finding(severity=f.severity, message=f.message, where=f.where) for f in report.findings]
    return ParseResponse(ok=report.ok, findings=findings, canonical=format_model(m) if report.ok else None)


@app.post("/explore", response_model=ExploreResponse)
def explore(req: ExploreRequest):
    m = _load(req.source)
    t0 = time.perf_counter()
    mdp = _explore(m, req)
    st = stats(mdp)
    return ExploreResponse(
        **st,
        reason=mdp.truncation_reason,
        seconds=round(time.perf_counter() - t0, 3),
        mdp=mdp_to_json(mdp) if req.dump else None,
    )


@app.post("/check", response_model=CheckResponse)
def check_query(req: CheckRequest):
    m = _load(req.source)
    mdp = _explore(m, req)
    if mdp.truncated:
        _fail(LIMIT_ERROR, "limit", f"state space truncated ({mdp.truncation_reason})")
    try:
        r = check(mdp, m, req.query)
    except QueryError as exc:
        _fail(DOMAIN_ERROR, "query", str(exc))
    return CheckResponse(query=req.query, value=float(r.value), iterations=r.iterations, converged=r.converged, states=len(mdp))


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest):
    m = _load(req.source)
    traces = simulate_batch(m, _policy(m, req.policy), req.runs, req.ticks, req.seed, req.scheduler, req.threads)
    return SimulateResponse(
        runs=len(traces),
        deadlocks=sum(1 for t in traces if t.deadlock_tick is not None),
        traces=[trace_csv(t, m) for t in traces] if req.traces else [],
        summary_csv=summary_csv(traces),
        mean_csv=mean_csv(traces, req.ticks),
    )


@app.post("/translate", response_model=TranslateResponse)
def translate(req: TranslateRequest):
    m = _load(req.source)
    try:
        out = emit_model(m, _policy(m, req.policy), rewards=req.rewards)
    except UnsupportedTerm as exc:
        _fail(DOMAIN_ERROR, "unsupported", str(exc))
    props = None
    if req.queries:
        try:
            props = props_text(m, req.queries)
        except QueryError as exc:
            _fail(DOMAIN_ERROR, "query", str(exc))
    return TranslateResponse(nm=out.text, props=props)


@app.post("/verify", response_model=VerifyResponse)
def verify(req: VerifyRequest):
    from .gc import (
        ConflictingWrite,
        NonConfluentChain,
        RangeViolation,
        build_gc_mdp,
        correspondence_check,
        counter_soundness,
        inject_fault,
        parse_gc,
        quotient_stable,
    )
    from .semantics import Engine

    m = _load(req.source)
    t0 = time.perf_counter()
    policy = _policy(m, req.policy)
    limits = ExploreLimits(max_states=req.max_states)
    palps = build_mdp(m, policy, limits)
    if palps.truncated:
        _fail(LIMIT_ERROR, "limit", f"calculus state space truncated ({palps.truncation_reason})")
    try:
        text = emit_model(m, policy).text
    except UnsupportedTerm as exc:
        _fail(DOMAIN_ERROR, "unsupported", str(exc))
    if req.inject_fault:
        text = inject_fault(text)
    prog = parse_gc(text)
    try:
        gc_mdp = build_gc_mdp(prog, ExploreLimits(max_states=req.max_states * 20))
    except (RangeViolation, ConflictingWrite) as exc:
        return VerifyResponse(
            ok=False, palps_states=len(palps), gc_states=0, stable_states=0,
            mismatches=[{"kind": "runtime", "message": str(exc)}], seconds=round(time.perf_counter() - t0, 3),
        )
    if gc_mdp.truncated:
        _fail(LIMIT_ERROR, "limit", f"program state space truncated ({gc_mdp.truncation_reason})")
    try:
        q = quotient_stable(gc_mdp, prog)
    except NonConfluentChain as exc:
        return VerifyResponse(
            ok=False, palps_states=len(palps), gc_states=len(gc_mdp), stable_states=0,
            mismatches=[{"kind": "non-confluent", "message": str(exc)}], seconds=round(time.perf_counter() - t0, 3),
        )
    report = correspondence_check(palps, q, prog)
    counters = [] if req.inject_fault else counter_soundness(q, prog, Engine(m))
    return VerifyResponse(
        ok=report.ok and not counters,
        palps_states=len(palps),
        gc_states=len(gc_mdp),
        stable_states=len(q),
        mismatches=report.mismatches,
        counter_errors=counters[:20],
        seconds=round(time.perf_counter() - t0, 3),
    )
