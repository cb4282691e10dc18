"""
Run multigrid and convergence studies for the condensed EDG Poisson solver.

Usage:
	poetry run edg-mg --preset table1 --format md
	poetry run python -m edg_multigrid --degree 2 --tau const --steps 2 --levels 4
"""
import argparse
import asyncio
import logging
import sys

from pathlib import Path
from typing import Any, Dict, List, Optional

from edg_multigrid.consumer import run_studies
from edg_multigrid.exceptions import (
	ConfigurationError,
	DegenerateCell,
	DimensionMismatch,
	EigenvalueEstimateError,
	InjectionMismatch,
	LocalSolverError,
	MeshFormatError,
	ReportWriteError,
	SingularMatrixError,
	ZeroDiagonal,
)
from edg_multigrid.helpers import ConfigHandler, setup_logger, worker_count
from edg_multigrid.studies import expand_configs, emit

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2

NUMERICAL_ERRORS = (
	DegenerateCell,
	DimensionMismatch,
	EigenvalueEstimateError,
	InjectionMismatch,
	LocalSolverError,
	SingularMatrixError,
	ZeroDiagonal,
	ValueError,
)


def build_parser() -> argparse.ArgumentParser:
	parser = argparse.ArgumentParser(
		prog="edg-mg",
		description="Multigrid iteration counts, convergence orders and condition numbers for EDG on the unit square.",
	)
	parser.add_argument("--study", choices=["iters", "eoc", "spectral"], help="Study to run")
	parser.add_argument("--preset", help="Named preset from the config file (table1, table2, spectral)")
	parser.add_argument("--config", type=Path, help="YAML config file (default: config/experiments.yaml)")
	parser.add_argument("--degree", type=int, nargs="+", help="Polynomial degree(s) p")
	parser.add_argument("--levels", type=int, help="Finest mesh level L")
	parser.add_argument("--tau", choices=["inv_h", "const", "inv_h_cell"], nargs="+", help="Penalty law(s)")
	parser.add_argument("--tau-coeff", type=float, dest="tau_coeff", help="Penalty coefficient c")
	parser.add_argument("--smoother", choices=["gs", "sgs", "jacobi"], help="Point smoother")
	parser.add_argument("--steps", type=int, nargs="+", help="Smoothing steps m per half cycle")
	parser.add_argument("--damping", type=float, help="Jacobi damping factor")
	parser.add_argument("--rhs", choices=["one", "sine"], help="Right hand side")
	parser.add_argument("--tol", type=float, help="Relative residual tolerance")
	parser.add_argument("--mesh", type=Path, help="Coarse mesh file")
	parser.add_argument("--diagonals", choices=["figure", "union_jack"], help="Diagonal pattern of the built-in coarse grid")
	parser.add_argument("--format", choices=["csv", "md"], help="Output format")
	parser.add_argument("--out", type=Path, help="Output file (default: stdout)")
	parser.add_argument("--workers", type=int, help="Concurrent studies (EDG_MG_WORKERS overrides)")
	parser.add_argument("--timings", action="store_true", default=None, help="Add a wall_time column")
	parser.add_argument("--log-file", type=Path, dest="log_file", help="Rotating log file")
	parser.add_argument("-v", "--verbose", action="store_true", help="Log residual histories")
	return parser


def load_settings(args: argparse.Namespace) -> Dict[str, Any]:
	"""Config file defaults, then the preset, then command line flags."""
	try:
		if args.config is not None:
			handler = ConfigHandler(config_path=args.config)
		else:
			handler = ConfigHandler(project_root=PROJECT_ROOT)
	except FileNotFoundError:
		if args.config is not None:
			raise ConfigurationError("config", str(args.config), "file not found") from None
		logger.warning("No config/experiments.yaml found, using built-in defaults")
		handler = ConfigHandler(config_override={})

	settings = handler.get_settings(args.preset)
	settings["workers"] = handler.get_workers()
	overrides = {
		"study": args.study,
		"degree": args.degree,
		"levels": args.levels,
		"tau": args.tau,
		"tau_coeff": args.tau_coeff,
		"smoother": args.smoother,
		"steps": args.steps,
		"damping": args.damping,
		"rhs": args.rhs,
		"tol": args.tol,
		"mesh": str(args.mesh) if args.mesh is not None else None,
		"diagonals": args.diagonals,
		"format": args.format,
		"timings": args.timings,
		"workers": args.workers,
	}
	settings.update({key: value for key, value in overrides.items() if value is not None})
	return settings


def main(argv: Optional[List[str]] = None) -> int:
	args = build_parser().parse_args(argv)

	setup_logger(
		args.log_file,
		level=logging.DEBUG if args.verbose else logging.INFO,
		console=True,
		console_level=logging.DEBUG if args.verbose else logging.WARNING,
	)
	logger.info("EDG multigrid studies startup")

	try:
		settings = load_settings(args)
		workers = worker_count(settings.pop("workers", None))
		configs = expand_configs(settings)
	except (ConfigurationError, MeshFormatError) as e:
		logger.error("%s", e)
		print(f"edg-mg: error: {e}", file=sys.stderr)
		return EXIT_USAGE

	try:
		table, states = asyncio.run(run_studies(configs, workers))
	except (ConfigurationError, MeshFormatError) as e:
		print(f"edg-mg: error: {e}", file=sys.stderr)
		return EXIT_USAGE
	except NUMERICAL_ERRORS as e:
		logger.exception("Study failed")
		print(f"edg-mg: numerical failure: {e}", file=sys.stderr)
		return EXIT_NOT_CONVERGED

	try:
		text = emit(table, configs[0].output_format, args.out)
	except ReportWriteError as e:
		print(f"edg-mg: error: {e}", file=sys.stderr)
		return EXIT_NOT_CONVERGED
	if args.out is None:
		sys.stdout.write(text)

	for name, state in states.items():
		logger.info("Study [%s] %s after %.2fs", name, state.status.name, state.elapsed)
	if not table.all_converged:
		logger.warning("Some solves did not converge")
		return EXIT_NOT_CONVERGED
	return EXIT_OK


if __name__ == "__main__":
	sys.exit(main())
