"""Command-line driver.

A thin client over the HTTP service: by default the service runs in-process,
with --server pointing the same commands at a remote instance.  `run` submits
an experiment batch, polls it, and writes the CSV artifacts.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EPISODE_HEADER = ["controller", "seed", "tracking_cost", "violation_cost",
                  "mean_runtime_ms", "mean_feedback_ms", "failures"]
SUMMARY_HEADER = ["controller", "episodes", "tracking_cost_mean", "tracking_cost_std",
                  "violation_cost_mean", "violation_cost_std", "runtime_ms_mean",
                  "feedback_ms_mean", "failure_pct", "aborted_episodes"]
TRAJECTORY_HEADER = ["controller", "t", "px", "py", "pz", "vx", "vy", "vz",
                     "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz"]

RUN_DEFAULTS = {"task": "easy", "controllers": [], "episodes": 100, "seed": 0,
                "out": "results", "weights": None, "workers": 1, "n_steps": 225,
                "substeps": 1000, "params": None, "plant_mass_scale": 1.0}


def _make_client(server: str | None):
    if server:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _request(client, method: str, path: str, payload=None):
    """Issue one request; map HTTP errors onto the exit-code convention."""
    import httpx
    try:
        if method == "GET":
            resp = client.get(path)
        else:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: service unreachable: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if resp.status_code >= 500:
        click.echo(f"error: service failure ({resp.status_code})", err=True)
        sys.exit(EXIT_RUNTIME)
    if resp.status_code >= 400:
        detail = resp.json().get("detail", resp.text)
        click.echo(f"error: {detail}", err=True)
        sys.exit(EXIT_CONFIG)
    return resp.json()


def _num(value) -> str:
    """Full-precision, round-trippable rendering for cost-like columns."""
    return repr(float(value))


def _ms(value) -> str:
    """Timing columns: milliseconds with 2 decimals; blank when absent."""
    return "" if value is None else f"{float(value):.2f}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_outputs(out_dir: Path, result: dict) -> None:
    episode_rows = [
        [ep["controller"], ep["seed"], _num(ep["tracking_cost"]),
         _num(ep["violation_cost"]), _ms(ep["mean_runtime_ms"]),
         _ms(ep["mean_feedback_ms"]), ep["failures"]]
        for ep in result["episodes"]]
    _write_csv(out_dir / "episodes.csv", EPISODE_HEADER, episode_rows)

    summary_rows = [
        [s["controller"], s["episodes"], _num(s["tracking_cost_mean"]),
         _num(s["tracking_cost_std"]), _num(s["violation_cost_mean"]),
         _num(s["violation_cost_std"]), _ms(s["runtime_ms_mean"]),
         _ms(s["feedback_ms_mean"]), _num(s["failure_pct"]),
         s["aborted_episodes"]]
        for s in result["summary"]]
    _write_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary_rows)

    plot_rows = []
    for s in result["summary"]:
        plot_rows.append([s["controller"], "tracking", _num(s["tracking_cost_mean"])])
        plot_rows.append([s["controller"], "violation", _num(s["violation_cost_mean"])])
    _write_csv(out_dir / "plotdata.csv", ["controller", "component", "value"],
               plot_rows)

    traces = result.get("trajectories") or []
    if traces:
        rows = []
        for tr in traces:
            for i in range(len(tr["t"])):
                rows.append([tr["controller"]] +
                            [_num(tr[col][i]) for col in TRAJECTORY_HEADER[1:]])
        _write_csv(out_dir / "trajectories.csv", TRAJECTORY_HEADER, rows)


def _print_summary(result: dict) -> None:
    header = f"{'controller':<16}{'tracking':>12}{'J_v':>12}{'runtime ms':>12}" \
             f"{'feedback ms':>13}{'fail %':>9}"
    click.echo(header)
    for s in result["summary"]:
        fb = "-" if s["feedback_ms_mean"] is None else f"{s['feedback_ms_mean']:.2f}"
        click.echo(f"{s['controller']:<16}{s['tracking_cost_mean']:>12.4f}"
                   f"{s['violation_cost_mean']:>12.4f}{s['runtime_ms_mean']:>12.2f}"
                   f"{fb:>13}{s['failure_pct']:>9.2f}")


@click.group()
def main() -> None:
    """Real-time NMPC benchmark driver."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config; flags override its fields.")
@click.option("--task", type=click.Choice(["easy", "hard"]), default=None)
@click.option("--controllers", default=None, help="Comma-separated identifiers.")
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--weights", default=None, help="Policy weight file (JSON).")
@click.option("--workers", type=int, default=None)
@click.option("--steps", "n_steps", type=int, default=None,
              help="Controller steps per episode.")
@click.option("--substeps", type=int, default=None,
              help="Plant integration substeps per controller period.")
@click.option("--server", default=None, help="Remote service URL.")
def run(config_path, task, controllers, episodes, seed, out_dir, weights,
        workers, n_steps, substeps, server):
    """Run an experiment batch and write episodes/summary/plotdata CSVs."""
    cfg = dict(RUN_DEFAULTS)
    if config_path:
        try:
            with open(config_path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(f"error: cannot read config {config_path}: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        unknown = set(doc) - set(RUN_DEFAULTS)
        if unknown:
            click.echo(f"error: unknown config fields {sorted(unknown)}", err=True)
            sys.exit(EXIT_CONFIG)
        cfg.update(doc)
    overrides = {"task": task, "episodes": episodes, "seed": seed,
                 "out": out_dir, "weights": weights, "workers": workers,
                 "n_steps": n_steps, "substeps": substeps}
    if controllers is not None:
        overrides["controllers"] = [c.strip() for c in controllers.split(",") if c.strip()]
    cfg.update({k: v for k, v in overrides.items() if v is not None})

    if not cfg["controllers"]:
        click.echo("error: no controllers configured (use --controllers)", err=True)
        sys.exit(EXIT_CONFIG)
    if cfg["episodes"] < 1:
        click.echo("error: episodes must be >= 1", err=True)
        sys.exit(EXIT_CONFIG)
    if cfg["weights"] and server is None and not Path(cfg["weights"]).exists():
        click.echo(f"error: weight file not found: {cfg['weights']}", err=True)
        sys.exit(EXIT_CONFIG)
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        click.echo(f"error: cannot create output dir {out}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    payload = {"task": cfg["task"], "controllers": cfg["controllers"],
               "episodes": cfg["episodes"], "seed": cfg["seed"],
               "weights_path": cfg["weights"], "workers": cfg["workers"],
               "n_steps": cfg["n_steps"], "substeps": cfg["substeps"],
               "params": cfg["params"],
               "plant_mass_scale": cfg["plant_mass_scale"]}
    client = _make_client(server)
    job = _request(client, "POST", "/experiments", payload)
    status = _poll(client, job["id"])
    if status["status"] == "error":
        click.echo(f"error: experiment failed: {status['error']}", err=True)
        sys.exit(EXIT_RUNTIME)
    _write_outputs(out, status["result"])
    _print_summary(status["result"])
    click.echo(f"wrote {out / 'episodes.csv'}, {out / 'summary.csv'}, "
               f"{out / 'plotdata.csv'}")


def _poll(client, job_id: str, interval: float = 0.3) -> dict:
    last = -1
    while True:
        status = _request(client, "GET", f"/experiments/{job_id}")
        if status["status"] in ("done", "error"):
            if last >= 0:
                click.echo("", err=True)
            return status
        if status["done"] != last and status["total"]:
            last = status["done"]
            click.echo(f"\r{status['done']}/{status['total']} episodes",
                       err=True, nl=False)
        time.sleep(interval)


@main.command()
@click.argument("identifier")
@click.option("--server", default=None, help="Remote service URL.")
def parse(identifier, server):
    """Parse a controller identifier and print its configuration."""
    client = _make_client(server)
    doc = _request(client, "POST", "/controllers/parse",
                   {"identifier": identifier})
    parts = [f"kind={doc['kind']}"]
    for key in ("M", "N", "beta", "tau", "pept_init"):
        if doc.get(key) is not None:
            parts.append(f"{key}={doc[key]}")
    click.echo(f"{doc['identifier']}: " + " ".join(parts))


@main.command("policy-eval")
@click.option("--weights", required=True, type=click.Path(exists=True),
              help="Policy weight file (JSON).")
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True),
              help="JSON file with a list of observation vectors.")
@click.option("--out", "out_path", default="-",
              help="Output JSON path ('-' for stdout).")
@click.option("--server", default=None, help="Remote service URL.")
def policy_eval(weights, obs_path, out_path, server):
    """Evaluate a policy network on a batch of observations."""
    try:
        with open(weights) as fh:
            weight_doc = json.load(fh)
        with open(obs_path) as fh:
            observations = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    client = _make_client(server)
    doc = _request(client, "POST", "/policy/eval",
                   {"weights": weight_doc, "observations": observations})
    text = json.dumps(doc, indent=2)
    if out_path == "-":
        click.echo(text)
    else:
        Path(out_path).write_text(text + "\n")


@main.command("expert-data")
@click.option("--controller", default="RTI-40", show_default=True)
@click.option("--task", type=click.Choice(["easy", "hard"]), default="easy")
@click.option("--episodes", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--weights", default=None)
@click.option("--steps", "n_steps", type=int, default=225)
@click.option("--substeps", type=int, default=1000)
@click.option("--out", "out_path", default="expert.csv", show_default=True)
@click.option("--server", default=None, help="Remote service URL.")
def expert_data(controller, task, episodes, seed, weights, n_steps, substeps,
                out_path, server):
    """Export closed-loop (observation, control) pairs for policy cloning."""
    client = _make_client(server)
    doc = _request(client, "POST", "/datasets/expert",
                   {"controller": controller, "task": task, "episodes": episodes,
                    "seed": seed, "weights_path": weights, "n_steps": n_steps,
                    "substeps": substeps})
    obs, controls = doc["observations"], doc["controls"]
    n_obs = len(obs[0]) if obs else 0
    n_u = len(controls[0]) if controls else 0
    header = [f"obs_{i}" for i in range(n_obs)] + [f"u_{i}" for i in range(n_u)]
    rows = [[_num(v) for v in o + u] for o, u in zip(obs, controls)]
    _write_csv(Path(out_path), header, rows)
    click.echo(f"wrote {len(rows)} samples to {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
