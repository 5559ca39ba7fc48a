"""Command-line client.  Requests go to the HTTP service, in process unless
``--server URL`` points at a running ``palps serve``.

Exit codes: 0 success, 1 domain failure (invalid model, failed check),
2 usage or I/O error, 3 a state or time limit was hit.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .statespace import default_threads

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_LIMIT = 0, 1, 2, 3


class Client:
    def __init__(self, server: str | None):
        self.server = server
        self._http = None

    def _session(self):
        if self._http is None:
            if self.server:
                import httpx

                self._http = httpx.Client(base_url=self.server, timeout=None)
            else:
                import warnings

                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    from fastapi.testclient import TestClient

                from .service import app

                self._http = TestClient(app)
        return self._http

    def post(self, path: str, payload: dict) -> dict:
        try:
            r = self._session().post(path, json=payload)
        except Exception as exc:  # connection problems with a remote server
            click.echo(f"error: cannot reach service: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        if r.status_code == 200:
            return r.json()
        detail = r.json().get("detail", r.text) if r.headers.get("content-type", "").startswith("application/json") else r.text
        if isinstance(detail, dict):
            click.echo(f"error: {detail.get('message')}", err=True)
            for d in detail.get("diagnostics", []):
                click.echo(f"  {d}", err=True)
        else:
            click.echo(f"error: {detail}", err=True)
        if r.status_code == 413:
            sys.exit(EXIT_LIMIT)
        if r.status_code == 422:
            sys.exit(EXIT_DOMAIN)
        sys.exit(EXIT_USAGE)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"error: cannot read {path}: {exc.strerror or exc}", err=True)
        sys.exit(EXIT_USAGE)


def _write(path: str, text: str):
    try:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
    except OSError as exc:
        click.echo(f"error: cannot write {path}: {exc.strerror or exc}", err=True)
        sys.exit(EXIT_USAGE)


policy_opt = click.option("--policy", type=click.Choice(["on", "off"]), default="on", show_default=True,
                          help="apply the model's priority policy")
threads_opt = click.option("--threads", type=click.IntRange(1), default=None,
                           help="worker threads (default: $PALPS_THREADS or 1)")


@click.group()
@click.option("--server", envvar="PALPS_SERVER", default=None, help="URL of a running palps service")
@click.version_option(package_name="artifact")
@click.pass_context
def main(ctx, server):
    """Population models with locations and priorities: analysis and translation."""
    ctx.obj = Client(server)


@main.command("parse")
@click.argument("file")
@click.option("--canonical", is_flag=True, help="print the canonical form of a valid model")
@click.pass_obj
def cmd_parse(client: Client, file, canonical):
    """Validate a model file."""
    res = client.post("/parse", {"source": _read(file)})
    for f in res["findings"]:
        where = f" [{f['where']}]" if f.get("where") else ""
        click.echo(f"{f['severity']}: {f['message']}{where}")
    if res["ok"]:
        if canonical:
            click.echo(res["canonical"], nl=False)
        else:
            click.echo(f"{file}: ok")
        sys.exit(EXIT_OK)
    sys.exit(EXIT_DOMAIN)


@main.command("explore")
@click.argument("file")
@policy_opt
@click.option("--max-states", type=click.IntRange(1), default=1_000_000, show_default=True)
@click.option("--dump-mdp", type=click.Path(dir_okay=False), default=None, help="write the MDP as JSON")
@threads_opt
@click.pass_obj
def cmd_explore(client: Client, file, policy, max_states, dump_mdp, threads):
    """Build the state space and print its size."""
    res = client.post("/explore", {
        "source": _read(file), "policy": policy == "on", "max_states": max_states,
        "threads": threads or default_threads(), "dump": dump_mdp is not None,
    })
    click.echo(f"policy={policy} states={res['states']} choices={res['choices']} "
               f"transitions={res['transitions']} time={res['seconds']:.3f}s"
               + (" truncated" if res["truncated"] else ""))
    if dump_mdp:
        _write(dump_mdp, json.dumps(res["mdp"], indent=1) + "\n")
    if res["truncated"]:
        click.echo(f"warning: exploration stopped early: {res['reason']}", err=True)
        sys.exit(EXIT_LIMIT)


@main.command("check")
@click.argument("file")
@click.option("--query", "queries", multiple=True, required=True, help='e.g. "Pmax=? [ true U<=10 pop=0 ]"')
@policy_opt
@click.option("--max-states", type=click.IntRange(1), default=1_000_000, show_default=True)
@threads_opt
@click.pass_obj
def cmd_check(client: Client, file, queries, policy, max_states, threads):
    """Evaluate probability and reward queries."""
    source = _read(file)
    for q in queries:
        res = client.post("/check", {
            "source": source, "query": q, "policy": policy == "on",
            "max_states": max_states, "threads": threads or default_threads(),
        })
        note = "" if res["converged"] else " (not converged)"
        click.echo(f"{q}: {res['value']:.12g}{note}  [{res['states']} states, {res['iterations']} iterations]")


@main.command("simulate")
@click.argument("file")
@click.option("--runs", type=click.IntRange(1), default=1, show_default=True)
@click.option("--ticks", type=click.IntRange(0), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="run i uses seed+i")
@click.option("--scheduler", type=click.Choice(["uniform", "ordered"]), default="uniform", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default="sim", show_default=True)
@click.option("--no-traces", is_flag=True, help="write only the summary and mean CSV files")
@policy_opt
@threads_opt
@click.pass_obj
def cmd_simulate(client: Client, file, runs, ticks, seed, scheduler, out_dir, no_traces, policy, threads):
    """Monte Carlo simulation; writes per-run, summary and mean CSV files."""
    res = client.post("/simulate", {
        "source": _read(file), "runs": runs, "ticks": ticks, "seed": seed, "scheduler": scheduler,
        "policy": policy == "on", "threads": threads or default_threads(), "traces": not no_traces,
    })
    out = Path(out_dir)
    width = max(3, len(str(runs - 1)))
    for i, text in enumerate(res["traces"]):
        _write(str(out / f"run_{i:0{width}d}.csv"), text)
    _write(str(out / "summary.csv"), res["summary_csv"])
    _write(str(out / "mean.csv"), res["mean_csv"])
    last = res["mean_csv"].strip().splitlines()[-1].split(",")[1]
    click.echo(f"runs={res['runs']} deadlocks={res['deadlocks']} mean_population@{ticks}={last} -> {out}")


@main.command("translate")
@click.argument("file")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="PRISM model (.nm); stdout if omitted")
@click.option("--props", "props_path", type=click.Path(dir_okay=False), default=None, help="property file for --query")
@click.option("--rewards", default="", help="comma-separated channels to count with reward structures")
@click.option("--query", "queries", multiple=True, help="query to translate into the property file")
@policy_opt
@click.pass_obj
def cmd_translate(client: Client, file, out_path, props_path, rewards, queries, policy):
    """Translate a model into the PRISM language."""
    chans = [c.strip() for c in rewards.split(",") if c.strip()]
    if props_path and not queries:
        click.echo("error: --props needs at least one --query", err=True)
        sys.exit(EXIT_USAGE)
    res = client.post("/translate", {"source": _read(file), "rewards": chans, "queries": list(queries), "policy": policy == "on"})
    if out_path:
        _write(out_path, res["nm"])
    else:
        click.echo(res["nm"], nl=False)
    if props_path:
        _write(props_path, res["props"])


@main.command("verify")
@click.argument("file")
@click.option("--max-states", type=click.IntRange(1), default=200_000, show_default=True)
@click.option("--inject-fault", is_flag=True, help="negate one guard first (negative control)")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None, help="write the report as JSON")
@policy_opt
@click.pass_obj
def cmd_verify(client: Client, file, max_states, inject_fault, report_path, policy):
    """Check the translation against the calculus state by state."""
    res = client.post("/verify", {
        "source": _read(file), "max_states": max_states, "inject_fault": inject_fault, "policy": policy == "on",
    })
    if report_path:
        _write(report_path, json.dumps(res, indent=1, sort_keys=True) + "\n")
    status = "ok" if res["ok"] else "MISMATCH"
    click.echo(f"{status}: calculus states={res['palps_states']} program states={res['gc_states']} "
               f"stable={res['stable_states']} mismatches={len(res['mismatches'])} "
               f"counter errors={len(res['counter_errors'])} time={res['seconds']:.2f}s")
    for m in res["mismatches"][:5]:
        click.echo(f"  {json.dumps(m, sort_keys=True)[:200]}")
    sys.exit(EXIT_OK if res["ok"] else EXIT_DOMAIN)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def cmd_serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("palps.service:app", host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    main()
