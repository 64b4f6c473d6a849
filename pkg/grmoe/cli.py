"""
grmoe command line.

Every subcommand follows the same lifecycle:
- resolve the config (shipped spec or YAML file, then flag overrides)
- write the run manifest before any result
- run the experiment and write its CSV / JSON artifacts
- finalize the manifest with status, wall-clock and exit code

Exit codes: 0 success, 1 property violation, 2 usage or config error.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd
import typer
from pydantic import BaseModel, ValidationError

from .config import settings
from .context.run_context import set_run_context
from .errors import ConfigError, GrmoeError
from .observability import configure_logging, log_event
from .schemas import SUBCOMMAND_CONFIGS
from .services.bounds import collapse_harness, run_bound_sweep
from .services.checkpoint import load_checkpoint, save_checkpoint
from .services.experiments import (
    run_ablation,
    run_alpha_sweep,
    run_bench,
    run_zvalidate,
    train_run,
    zvalidate_violations,
)
from .services.manifest import (
    finalize_manifest,
    new_manifest,
    read_manifest,
    write_manifest,
)
from .services.report import write_csv, write_json
from .services.spec_loader import SpecLoader
from .services.training import metrics_log_to_csv

logger = logging.getLogger("grmoe.cli")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2

Outcome = Tuple[int, Dict[str, str]]

app = typer.Typer(
    add_completion=False, help="Grassmannian mixture-of-experts routing experiments"
)

ConfigOpt = typer.Option(
    None, "--config", "-c", help="YAML config file or shipped spec name"
)
OutOpt = typer.Option(
    None, "--out", "-o", help="Run directory (default: <out_dir>/<subcommand>)"
)
SeedsOpt = typer.Option(None, "--seeds", help="Seed list such as 0,1,2 or 0-19")
ThreadsOpt = typer.Option(
    None, "--threads", min=1, help="Worker threads for seed-level jobs"
)


def parse_seeds(text: str) -> List[int]:
    """`0,3,7` or `0-19` (inclusive) or a mix of both."""
    seeds: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError as e:
        raise ConfigError(f"bad seed list {text!r}") from e
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _overrides(
    subcommand: str, seeds: Optional[str], threads: Optional[int]
) -> Dict[str, Any]:
    fields = SUBCOMMAND_CONFIGS[subcommand].model_fields
    out: Dict[str, Any] = {}
    if seeds is not None:
        parsed = parse_seeds(seeds)
        if "seeds" in fields:
            out["seeds"] = parsed
        elif "seed" in fields:
            out["seed"] = parsed[0]
    if threads is None and settings.threads > 1:
        threads = settings.threads
    if threads is not None and "threads" in fields:
        out["threads"] = threads
    return out


def _seed_list(cfg: BaseModel) -> List[int]:
    if hasattr(cfg, "seeds"):
        return sorted(int(s) for s in cfg.seeds)
    if hasattr(cfg, "seed"):
        return [int(cfg.seed)]
    return []


# ---------------------------------------------------------------------------
# Subcommand bodies: (cfg, out_dir) -> (exit code, artifacts)
# ---------------------------------------------------------------------------


def _bench(cfg, out: Path) -> Outcome:
    rows, summary = run_bench(cfg)
    write_csv(rows, out / "bench.csv")
    write_csv(summary, out / "bench_summary.csv")
    diverged = int(rows["diverged"].sum())
    typer.echo(summary.to_string(index=False))
    if diverged:
        typer.echo(f"{diverged} run(s) diverged; see the diverged column")
    return EXIT_OK, {"rows": "bench.csv", "summary": "bench_summary.csv"}


def _train(cfg, out: Path) -> Outcome:
    ckpt, log = train_run(cfg)
    save_checkpoint(out / "checkpoint.json", ckpt)
    metrics_log_to_csv(log, out / "metrics.csv")
    last = log.last
    typer.echo(
        f"step {last.step}: acc={last.acc:.4f} cv={last.cv:.4f} "
        f"collapsed={last.collapsed}"
    )
    return EXIT_OK, {"checkpoint": "checkpoint.json", "metrics": "metrics.csv"}


def _alpha_sweep(cfg, out: Path) -> Outcome:
    if not cfg.checkpoint:
        raise ConfigError(
            "alpha-sweep needs a checkpoint "
            "(--checkpoint or `checkpoint:` in the config)"
        )
    ckpt = load_checkpoint(cfg.checkpoint)
    result = run_alpha_sweep(cfg, ckpt)
    artifacts = {"table": "alpha_sweep.csv", "kappa": "kappa_report.json"}
    write_csv(result.table, out / "alpha_sweep.csv")
    write_json(result.kappa_report, out / "kappa_report.json")
    if result.temperature is not None:
        write_csv(result.temperature, out / "temperature.csv")
        artifacts["temperature"] = "temperature.csv"
    typer.echo(result.table.to_string(index=False))
    if not result.monotone:
        typer.echo("entropy is not monotone nonincreasing in alpha", err=True)
        return EXIT_VIOLATION, artifacts
    return EXIT_OK, artifacts


def _bounds(cfg, out: Path) -> Outcome:
    summary = run_bound_sweep(cfg)
    write_json(summary.to_dict(), out / "bounds.json")
    typer.echo(f"{summary.instances} instances, {summary.violations} violation(s)")
    code = EXIT_VIOLATION if summary.violations else EXIT_OK
    return code, {"report": "bounds.json"}


def _zvalidate(cfg, out: Path) -> Outcome:
    table = run_zvalidate(cfg)
    write_csv(table, out / "z_validate.csv")
    violations = zvalidate_violations(table)
    typer.echo(table.to_string(index=False))
    if violations:
        typer.echo(
            f"{violations} saddle-point row(s) outside tolerance "
            "in the training regime",
            err=True,
        )
        return EXIT_VIOLATION, {"table": "z_validate.csv"}
    return EXIT_OK, {"table": "z_validate.csv"}


def _ablate(cfg, out: Path) -> Outcome:
    rows, summary = run_ablation(cfg)
    name = f"ablate_{cfg.which}"
    write_csv(rows, out / f"{name}.csv")
    write_csv(summary, out / f"{name}_summary.csv")
    typer.echo(summary.to_string(index=False))
    return EXIT_OK, {"rows": f"{name}.csv", "summary": f"{name}_summary.csv"}


def _collapse(cfg, out: Path) -> Outcome:
    result = collapse_harness(cfg)
    per_seed = pd.DataFrame(
        [
            {
                "seed": r.seed,
                "gamma": r.gamma,
                "rho": r.rho,
                "kappa_min": r.kappa_min,
                "kappa_max": r.kappa_max,
                "bound": r.bound,
                "cv": r.cv,
            }
            for r in result.per_seed
        ],
        columns=["seed", "gamma", "rho", "kappa_min", "kappa_max", "bound", "cv"],
    )
    write_json(result.to_dict(), out / "collapse.json")
    write_csv(per_seed, out / "collapse_seeds.csv")
    typer.echo(
        f"pooled cv={result.pooled_cv:.6g} threshold={result.threshold} "
        f"passed={result.passed}"
    )
    code = EXIT_OK if result.passed else EXIT_VIOLATION
    return code, {"report": "collapse.json", "seeds": "collapse_seeds.csv"}


BODIES: Dict[str, Callable[[Any, Path], Outcome]] = {
    "bench": _bench,
    "train": _train,
    "alpha-sweep": _alpha_sweep,
    "bounds": _bounds,
    "z-validate": _zvalidate,
    "ablate": _ablate,
    "collapse": _collapse,
}


def execute(subcommand: str, cfg: BaseModel, out: Optional[Path]) -> int:
    """Manifest, body, finalize. Returns the exit code."""
    out = out or Path(settings.out_dir) / subcommand
    manifest = new_manifest(subcommand, cfg, _seed_list(cfg))
    set_run_context(run_id=manifest.run_id, subcommand=subcommand)
    write_manifest(out, manifest)
    log_event(logger, "run_started", out=str(out))
    started = time.perf_counter()
    try:
        code, artifacts = BODIES[subcommand](cfg, out)
    except (ConfigError, ValidationError) as e:
        typer.echo(f"error: {e}", err=True)
        finalize_manifest(out, manifest, started, "failed", EXIT_CONFIG)
        return EXIT_CONFIG
    except GrmoeError as e:
        log_event(
            logger,
            "run_failed",
            level=logging.ERROR,
            error=type(e).__name__,
            detail=str(e),
        )
        typer.echo(f"error: {type(e).__name__}: {e}", err=True)
        finalize_manifest(out, manifest, started, "failed", EXIT_CONFIG)
        return EXIT_CONFIG
    status = "ok" if code == EXIT_OK else "violation"
    finalize_manifest(out, manifest, started, status, code, artifacts)
    return code


def _load(
    subcommand: str, config: Optional[str], overrides: Dict[str, Any]
) -> BaseModel:
    return SpecLoader().load(subcommand, config, overrides)


def _run(
    subcommand: str,
    config: Optional[str],
    out: Optional[Path],
    extra: Optional[Dict[str, Any]] = None,
    seeds: Optional[str] = None,
    threads: Optional[int] = None,
) -> None:
    configure_logging()
    try:
        overrides = _overrides(subcommand, seeds, threads)
        overrides.update(extra or {})
        cfg = _load(subcommand, config, overrides)
    except ConfigError as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG)
    raise typer.Exit(execute(subcommand, cfg, out))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@app.command()
def bench(
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
    threads: Optional[int] = ThreadsOpt,
    methods: Optional[str] = typer.Option(
        None, "--methods", help="Comma-separated method list"
    ),
):
    """Seeded benchmark: every method on every seed, plus the per-method summary."""
    extra = {}
    if methods is not None:
        extra["methods"] = [m.strip() for m in methods.split(",") if m.strip()]
    _run("bench", config, out, extra, seeds, threads)


@app.command()
def train(
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
    amortized: bool = typer.Option(
        False, "--amortized", help="Train the amortized-concentration router"
    ),
):
    """Train one router and write its checkpoint and metrics log."""
    extra = {"method": "grmoe_amortized"} if amortized else {}
    _run("train", config, out, extra, seeds)


@app.command("alpha-sweep")
def alpha_sweep(
    checkpoint: Optional[Path] = typer.Option(
        None, "--checkpoint", help="checkpoint.json written by `train`"
    ),
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    alphas: Optional[str] = typer.Option(
        None, "--alphas", help="Comma-separated alpha grid"
    ),
):
    """Post-hoc sparsity sweep over the concentration dial of a trained router."""
    extra: Dict[str, Any] = {}
    if checkpoint is not None:
        extra["checkpoint"] = str(checkpoint)
    if alphas is not None:
        try:
            extra["alphas"] = [float(a) for a in alphas.split(",") if a.strip()]
        except ValueError:
            typer.echo(f"error: bad alpha list {alphas!r}", err=True)
            raise typer.Exit(EXIT_CONFIG)
    _run("alpha-sweep", config, out, extra)


@app.command()
def bounds(
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
    instances: Optional[int] = typer.Option(None, "--instances", min=1),
):
    """Randomized sweep checking the entropy and top-k mass bounds."""
    extra = {"instances": instances} if instances is not None else {}
    _run("bounds", config, out, extra, seeds)


@app.command("z-validate")
def z_validate(
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
    mc_samples: Optional[int] = typer.Option(
        None, "--mc-samples", min=0, help="0 skips Monte Carlo"
    ),
):
    """Series vs saddle-point vs Monte Carlo normalizing constants."""
    extra = {"mc_samples": mc_samples} if mc_samples is not None else {}
    _run("z-validate", config, out, extra, seeds)


@app.command()
def ablate(
    which: Optional[str] = typer.Argument(
        None, help="beta | rho0 | rank | sampled_pairs"
    ),
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
    threads: Optional[int] = ThreadsOpt,
):
    """Sweep one training knob and report metrics per value."""
    extra = {"which": which} if which is not None else {}
    _run("ablate", config, out, extra, seeds, threads)


@app.command()
def collapse(
    config: Optional[str] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seeds: Optional[str] = SeedsOpt,
):
    """Load-balance harness: empirical CV against the collapse bound."""
    _run("collapse", config, out, None, seeds)


@app.command()
def replay(
    manifest: Path = typer.Argument(
        ..., help="manifest.json or the run directory holding it"
    ),
    out: Optional[Path] = OutOpt,
):
    """Re-run a subcommand from its manifest with the recorded resolved config."""
    configure_logging()
    try:
        recorded = read_manifest(manifest)
        model = SUBCOMMAND_CONFIGS.get(recorded.subcommand)
        if model is None:
            raise ConfigError(
                f"manifest names unknown subcommand {recorded.subcommand!r}"
            )
        cfg = model.model_validate(recorded.config)
    except (ConfigError, ValidationError) as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG)
    source = manifest if manifest.is_dir() else manifest.parent
    target = out or source.with_name(f"{source.name}-replay")
    log_event(logger, "replay", source=str(source), run_id=recorded.run_id)
    raise typer.Exit(execute(recorded.subcommand, cfg, target))


@app.command("specs")
def list_specs():
    """List the configs shipped with the package."""
    for name in SpecLoader().list_specs():
        typer.echo(name)


def main() -> None:  # pragma: no cover
    app()
