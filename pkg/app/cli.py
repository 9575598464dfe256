"""Command line: run, gamma-sweep, gibbs-sweep, verify, serve.

    python -m app.cli run --config circle.json --eps 0.02 --n 256
    python -m app.cli gamma-sweep --eps-list 0.08,0.04,0.02,0.01
    python -m app.cli verify
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app.config import get_settings
from app.schemas import RunConfig, Scenario
from app.services.campaigns import cmd_gamma_sweep, cmd_gibbs_sweep, cmd_run, cmd_verify
from app.services.errors import PhaseFieldError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def _eps_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasefield", description="Spectral phase-field gradient-flow lab")
    parser.add_argument("--log-level", default=None, help="overrides PHASEFIELD_LOG_LEVEL")
    parser.add_argument("--no-registry", action="store_true", help="do not record the command in the run registry")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
        p.add_argument("--scenario", choices=[s.value for s in Scenario])
        p.add_argument("--eps", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--s", type=float)
        p.add_argument("--t-end", type=float, dest="t_end")
        p.add_argument("--n", type=int, help="nodes per axis")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir", dest="output_dir")

    p_run = sub.add_parser("run", help="one minimizing-movement run with ledger, diagnostics and snapshots")
    config_flags(p_run)

    for name, default_ppe in (("gamma-sweep", 6.0), ("gibbs-sweep", 10.0)):
        p = sub.add_parser(name)
        config_flags(p)
        p.add_argument("--eps-list", type=_eps_list, default=[0.08, 0.04, 0.02, 0.01], dest="eps_list")
        p.add_argument("--max-workers", type=int, default=1, dest="max_workers")
        p.add_argument("--points-per-eps", type=float, default=default_ppe, dest="points_per_eps")

    p_verify = sub.add_parser("verify", help="invariant suite; exits nonzero on any violation")
    config_flags(p_verify)
    p_verify.add_argument("--steps", type=int, default=20)

    p_serve = sub.add_parser("serve", help="start the HTTP API")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flag overrides. Raises ValidationError before anything is allocated."""
    data = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("scenario", "eps", "tau", "s", "t_end", "seed", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value

    scenario = data.get("scenario", Scenario.circle_2d.value)
    dim = 1 if scenario == Scenario.profile_1d.value else 2
    grid = dict(data.get("grid") or {})
    if args.n is not None or (args.scenario is not None and grid.get("dim", 2) != dim):
        n = args.n or (grid.get("counts") or [128])[0]
        lengths = grid.get("lengths") or [1.0] * dim
        if len(lengths) != dim:
            lengths = [lengths[0]] * dim
        grid = {"dim": dim, "lengths": lengths, "counts": [n] * dim}
    if grid:
        data["grid"] = grid
    return RunConfig.model_validate(data)


def _print_invalid(exc: ValidationError) -> None:
    print(json.dumps({"valid": False, "errors": json.loads(exc.json(include_url=False))}, indent=2))


def _dispatch(args: argparse.Namespace, config: RunConfig, db) -> int:
    if args.command == "run":
        summary = cmd_run(config, db)
        print(f"✅ run {summary.config_hash}: {summary.steps} steps, "
              f"E {summary.energy_initial:.6f} -> {summary.energy_final:.6f}, "
              f"artifacts in {summary.output_dir}")
        return EXIT_OK

    if args.command == "gamma-sweep":
        report = cmd_gamma_sweep(config, args.eps_list, db, max_workers=args.max_workers,
                                 points_per_eps=args.points_per_eps)
        for row in report.rows:
            print(f"eps={row.eps:<8g} n={row.n:<5d} E_eps={row.E_eps:.6f} E0={row.E0_modica_mortola:.6f} "
                  f"gap={row.gap_modica_mortola:.3e} ratio={row.ratio:.4f}")
        print(report.message)
        return EXIT_OK if report.converging is not False else EXIT_FAILED

    if args.command == "gibbs-sweep":
        report = cmd_gibbs_sweep(config, args.eps_list, db, max_workers=args.max_workers,
                                 points_per_eps=args.points_per_eps)
        for row in report.rows:
            cauchy = "" if row.cauchy_difference is None else f" cauchy={row.cauchy_difference:.3e}"
            print(f"eps={row.eps:<8g} n={row.n:<5d} coef={row.coef:.5f} kappa={row.kappa_mean:.4f}{cauchy}")
        print(report.message)
        return EXIT_OK

    if args.command == "verify":
        report = cmd_verify(config, db, steps=args.steps)
        for check in report.checks:
            mark = "✅" if check.passed else "❌"
            print(f"{mark} {check.name}: {check.value:.3e} (threshold {check.threshold:.1e}) {check.detail}".rstrip())
        return EXIT_OK if report.passed else EXIT_FAILED

    raise ValueError(f"unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "serve":
        import uvicorn

        uvicorn.run("app.main:app", host=args.host, port=args.port)
        return EXIT_OK

    try:
        config = load_config(args)
    except ValidationError as exc:
        _print_invalid(exc)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"valid": False, "errors": [{"type": "config_file", "msg": str(exc)}]}, indent=2))
        return EXIT_INVALID

    db = None
    if not args.no_registry:
        from app.database import SessionLocal, init_db

        init_db()
        db = SessionLocal()
    try:
        return _dispatch(args, config, db)
    except PhaseFieldError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"❌ {args.command} failed: {exc}")
        return EXIT_FAILED
    finally:
        if db is not None:
            db.close()


if __name__ == "__main__":
    sys.exit(main())
