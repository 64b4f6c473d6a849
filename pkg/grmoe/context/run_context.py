from __future__ import annotations

from contextvars import ContextVar
from typing import Optional

# pool workers see these only through an explicit contextvars.copy_context()
run_id_ctx: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
subcommand_ctx: ContextVar[Optional[str]] = ContextVar("subcommand", default=None)
seed_ctx: ContextVar[Optional[int]] = ContextVar("seed", default=None)


def set_run_context(
    *,
    run_id: Optional[str] = None,
    subcommand: Optional[str] = None,
    seed: Optional[int] = None,
) -> None:
    if run_id is not None:
        run_id_ctx.set(run_id)
    if subcommand is not None:
        subcommand_ctx.set(subcommand)
    if seed is not None:
        seed_ctx.set(seed)


def get_run_context() -> dict:
    return {
        "run_id": run_id_ctx.get(),
        "subcommand": subcommand_ctx.get(),
        "seed": seed_ctx.get(),
    }
