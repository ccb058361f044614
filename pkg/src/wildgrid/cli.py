"""Command-line client for the analysis service.

Each subcommand reads case/sequence/model files, posts one request to the
service (in-process by default, remote with --url), and writes the JSON
report. Exit codes: 0 success, 1 when the analysis leaves violations
unresolved, 2 on input errors, 64 on usage errors.
"""

from __future__ import annotations

import json
import sys
import warnings
from pathlib import Path

import click
import httpx

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT = 2
EXIT_USAGE = 64


class ServiceClient:
    """POSTs to a remote base URL, or drives the app in-process when no URL
    is given."""

    def __init__(self, url: str | None):
        if url:
            self._client = httpx.Client(base_url=url.rstrip("/"), timeout=600.0)
        else:
            # the in-process transport drags in a noisy deprecation warning
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 400:
            detail = None
            try:
                detail = resp.json().get("detail")
            except Exception:
                detail = resp.text
            raise InputError(f"{path} failed ({resp.status_code}): {detail}")
        return resp.json()

    def get(self, path: str) -> dict:
        resp = self._client.get(path)
        if resp.status_code >= 400:
            raise InputError(f"{path} failed ({resp.status_code})")
        return resp.json()


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


def _read_text(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path!r}: {exc}") from None


def _read_json(path: str, what: str) -> dict:
    text = _read_text(path, what)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path!r} is not valid JSON: {exc}") from None


def _case_payload(case_path: str, sidecar: str | None) -> dict:
    if case_path.endswith(".m"):
        payload = {"case_matpower": _read_text(case_path, "case")}
        if sidecar:
            payload["sidecar"] = _read_json(sidecar, "sidecar")
        return payload
    if sidecar:
        raise InputError("--sidecar only applies to MATPOWER-format (.m) cases")
    return {"case": _read_json(case_path, "case")}


def _emit(report: dict, out: str | None):
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
        click.echo(f"report written to {out}")
    else:
        click.echo(text)


@click.group()
@click.option("--url", default=None, help="Base URL of a running service; default runs in-process.")
@click.pass_context
def cli(ctx, url):
    """Grid resilience toolkit: corridor screening, transient stability, and
    constrained redispatch."""
    ctx.obj = ServiceClient(url)


@cli.command()
@click.argument("case", type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None, help="Dynamics/shed-cost sidecar JSON (.m cases).")
@click.option("--out", type=click.Path(), default=None, help="Write the report to a file.")
@click.pass_obj
def validate(client: ServiceClient, case, sidecar, out):
    """Parse a case and check its invariants."""
    report = client.post("/validate", _case_payload(case, sidecar))
    _emit(report, out)
    if not report["valid"]:
        raise InputError(f"case invalid: {report['error']}")
    return EXIT_OK


@cli.command()
@click.argument("case", type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--ref-bus", type=int, default=None, help="Reference bus for injection sensitivities.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def ptdf(client: ServiceClient, case, sidecar, ref_bus, out):
    """Injection and outage sensitivity matrices."""
    payload = _case_payload(case, sidecar)
    if ref_bus is not None:
        payload["ref_bus"] = ref_bus
    report = client.post("/sensitivity", payload)
    _emit(report, out)
    return EXIT_OK


@cli.command()
@click.argument("case", type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--outage", "outages", type=int, multiple=True, help="Branch id to take out (repeatable).")
@click.option("--threshold", type=float, default=1.0, show_default=True, help="Utilization reporting threshold.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def ft(client: ServiceClient, case, sidecar, outages, threshold, out):
    """Corridor feasibility screen for an outage set.

    Exits 1 when the topology islands or a saturated cut-set is found.
    """
    payload = _case_payload(case, sidecar)
    payload["outages"] = list(outages)
    payload["utilization_threshold"] = threshold
    report = client.post("/ft", payload)
    _emit(report, out)
    if report["islanded"] or any(c["saturated"] for c in report["cutsets"]):
        return EXIT_VIOLATIONS
    return EXIT_OK


@cli.command()
@click.argument("case", type=click.Path())
@click.option("--sequence", required=True, type=click.Path(), help="Fault/outage event sequence JSON.")
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--t-end", type=float, default=5.0, show_default=True)
@click.option("--include-trajectory", is_flag=True, help="Embed downsampled rotor angles in the report.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def tds(client: ServiceClient, case, sequence, sidecar, dt, t_end, include_trajectory, out):
    """Simulate a fault sequence and report the stability verdict.

    Exits 1 when the trajectory is unstable.
    """
    payload = _case_payload(case, sidecar)
    payload.update(
        {
            "sequence": _read_json(sequence, "sequence"),
            "dt": dt,
            "t_end": t_end,
            "include_trajectory": include_trajectory,
        }
    )
    report = client.post("/tds", payload)
    _emit(report, out)
    if not report["stable"]:
        return EXIT_VIOLATIONS
    return EXIT_OK


@cli.command("train-tscp")
@click.argument("case", type=click.Path())
@click.option("--sequence", required=True, type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--contingency-id", required=True)
@click.option("--n", required=True, type=int, help="Number of sampled load profiles.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sigma", type=float, default=0.05, show_default=True, help="Relative load perturbation.")
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--t-end", type=float, default=5.0, show_default=True)
@click.option("--model-out", required=True, type=click.Path(), help="Where to write the trained model JSON.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def train_tscp(client: ServiceClient, case, sequence, sidecar, contingency_id, n, seed, sigma, dt, t_end, model_out, out):
    """Sample load profiles, simulate each, and fit the transfer model."""
    payload = _case_payload(case, sidecar)
    payload.update(
        {
            "sequence": _read_json(sequence, "sequence"),
            "contingency_id": contingency_id,
            "n": n,
            "seed": seed,
            "sigma": sigma,
            "dt": dt,
            "t_end": t_end,
        }
    )
    report = client.post("/train-tscp", payload)
    Path(model_out).write_text(json.dumps(report["model"], indent=2, sort_keys=True) + "\n")
    click.echo(f"model written to {model_out}")
    _emit(report, out)
    return EXIT_OK


@cli.command("eval-tscp")
@click.argument("case", type=click.Path())
@click.option("--sequence", required=True, type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--model", "model_path", required=True, type=click.Path(), help="Trained model JSON.")
@click.option("--n", required=True, type=int, help="Number of fresh evaluation samples.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--noise-level", type=float, default=0.0, show_default=True, help="Relative input noise (max 0.05).")
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--t-end", type=float, default=5.0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def eval_tscp(client: ServiceClient, case, sequence, sidecar, model_path, n, seed, noise_level, dt, t_end, out):
    """Evaluate a trained transfer model on freshly simulated samples."""
    payload = _case_payload(case, sidecar)
    payload.update(
        {
            "sequence": _read_json(sequence, "sequence"),
            "model": _read_json(model_path, "model"),
            "n": n,
            "seed": seed,
            "noise_level": noise_level,
            "dt": dt,
            "t_end": t_end,
        }
    )
    report = client.post("/eval-tscp", payload)
    _emit(report, out)
    return EXIT_OK


@cli.command()
@click.argument("case", type=click.Path())
@click.option("--sequence", required=True, type=click.Path())
@click.option("--sidecar", type=click.Path(), default=None)
@click.option("--mode", type=click.Choice(["rtsced", "tscopf", "cscopf"]), default="cscopf", show_default=True)
@click.option("--model", "model_path", type=click.Path(), default=None, help="Transfer model JSON (cscopf mode).")
@click.option("--contingency-id", default="contingency", show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--t-end", type=float, default=5.0, show_default=True)
@click.option("--max-rounds", type=int, default=10, show_default=True)
@click.option("--skip-bridge-outages", is_flag=True, help="Drop post-outage rows for bridge outages instead of failing.")
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def cscopf(client: ServiceClient, case, sequence, sidecar, mode, model_path, contingency_id, dt, t_end, max_rounds, skip_bridge_outages, out):
    """Redispatch against a contingency and verify the result.

    Exits 1 when the final dispatch does not verify clean (unstable,
    saturated corridors the mode cannot fix, infeasible, or round cap).
    """
    payload = _case_payload(case, sidecar)
    payload.update(
        {
            "sequence": _read_json(sequence, "sequence"),
            "contingency_id": contingency_id,
            "mode": mode,
            "dt": dt,
            "t_end": t_end,
            "max_rounds": max_rounds,
            "skip_bridge_outages": skip_bridge_outages,
        }
    )
    if model_path:
        payload["model"] = _read_json(model_path, "model")
    report = client.post("/cscopf", payload)
    _emit(report, out)
    verification = report.get("verification")
    clean = (
        report["status"] == "optimal"
        and verification is not None
        and verification["stable"]
        and not verification["saturated_cutsets"]
    )
    if mode == "rtsced":
        clean = report["status"] == "optimal"
    if mode == "tscopf":
        clean = report["status"] == "optimal" and verification is not None and verification["stable"]
    return EXIT_OK if clean else EXIT_VIOLATIONS


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the analysis service over HTTP."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)
    return EXIT_OK


def main(argv=None) -> int:
    """Entry point mapping click's control flow onto the exit-code contract."""
    try:
        rv = cli.main(args=argv, standalone_mode=False)
        return int(rv) if isinstance(rv, int) else EXIT_OK
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 130


if __name__ == "__main__":
    sys.exit(main())
