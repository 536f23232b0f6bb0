#!/usr/bin/env python3

import argparse
import os
import sys
import logging
from dataclasses import replace
from typing import List, Optional


def _cap_threads() -> None:
    """Apply MFMFE_MAX_THREADS to the BLAS/OpenMP pools; must run before numpy is imported."""
    limit = os.environ.get("MFMFE_MAX_THREADS")
    if limit:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, limit)


_cap_threads()

from colorama import init, Fore, Style  # noqa: E402

from src.adaptivity.adaptive import AdaptiveResult, run_adaptive  # noqa: E402
from src.config.settings import REFINEMENT_MODES, SOLVER_METHODS, PROBLEM_IDS, SettingsManager  # noqa: E402
from src.problems.benchmarks import get_problem  # noqa: E402
from src.utils.file_handlers import FileHandler  # noqa: E402
from src.utils.validators import NumericalError, ValidationError  # noqa: E402
from src.verification.audits import run_audits  # noqa: E402

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
SUMMARY_COLUMNS = ("iter", "N", "h_min", "eta_h", "eta_Q", "eta_total", "err_u", "eff_index")


class DarcyAdaptiveApp:
    """Main class tying settings, solver pipeline and file output together."""

    def __init__(self, config_path: Optional[str] = "config.json", **overrides):
        self.settings_manager = SettingsManager(config_path)
        self.settings_manager.override(**overrides)
        self.settings = self.settings_manager.settings
        if self.settings.debug_mode:
            logging.getLogger().setLevel(logging.DEBUG)

    def _file_handler(self) -> FileHandler:
        handler = FileHandler(self.settings.output.output_dir)
        handler.write_manifest(self.settings_manager.to_dict())
        return handler

    def solve(self) -> AdaptiveResult:
        """Single solve on the initial mesh refined `uniform_levels` times."""
        settings = replace(self.settings, adaptive=replace(self.settings.adaptive,
                                                           mode="uniform", max_iterations=1))
        problem = get_problem(settings.problem.problem)
        result = run_adaptive(problem, settings, self._file_handler())
        row = result.history.rows[-1]
        print(
            f"{problem.name}: N={row.n_elements} ndof_u={row.ndof_u} "
            f"eta_h={row.eta_h:.6e} eta_Q={row.eta_Q:.6e} eta_total={row.eta_total:.6e}"
            + (f" err_u={row.err_u:.6e} err_p={row.err_p:.6e} err_Qhp={row.err_Qhp:.6e}"
               if row.err_u is not None else "")
        )
        return result

    def adapt(self) -> AdaptiveResult:
        """Full solve, estimate, mark, refine run with a convergence table."""
        problem = get_problem(self.settings.problem.problem)
        result = run_adaptive(problem, self.settings, self._file_handler())
        self._print_table(result)
        return result

    def _print_table(self, result: AdaptiveResult) -> None:
        header = "".join(f"{name:>14}" for name in SUMMARY_COLUMNS)
        print(Style.BRIGHT + Fore.CYAN + header + Style.RESET_ALL)
        for row in result.history.rows:
            values = (row.iteration, row.n_elements, row.h_min, row.eta_h, row.eta_Q,
                      row.eta_total, row.err_u, row.eff_index)
            print("".join(
                f"{'-':>14}" if v is None else (f"{v:>14d}" if isinstance(v, int) else f"{v:>14.4e}")
                for v in values
            ))
        print(f"Stopped: {result.stop_reason}")
        if result.shape_violations:
            print(Fore.RED + f"Minimum angle floor broken at iterations "
                  f"{', '.join(map(str, result.shape_violations))}" + Style.RESET_ALL)
        for name in ("eta_total", "err_u"):
            try:
                print(f"Slope of {name} vs N over the last 4 iterations: "
                      f"{result.history.slope(name):.3f}")
            except ValueError:
                pass

    def verify(self) -> bool:
        """Run the audit suite and print one line per audit."""
        results = run_audits()
        for result in results:
            status = (Fore.GREEN + "PASS" if result.passed else Fore.RED + "FAIL") + Style.RESET_ALL
            print(f"[{status}] {result.audit_id}: {result.detail}")
        failed = [r.audit_id for r in results if not r.passed]
        if failed:
            print(Fore.RED + f"Failed audits: {', '.join(failed)}" + Style.RESET_ALL)
        return not failed


class _UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_arguments(argv: Optional[List[str]] = None):
    """Parse command line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default='config.json', help='JSON configuration file')
    common.add_argument('--problem', choices=PROBLEM_IDS, help='Benchmark problem')
    common.add_argument('--uniform-levels', type=int, help='Uniform refinements of the initial mesh')
    common.add_argument('--method', choices=SOLVER_METHODS, help='Discrete scheme')
    common.add_argument('--no-hot', action='store_true', help='Drop the higher order estimator terms')
    common.add_argument('--output', help='Output directory')
    common.add_argument('--debug', action='store_true', help='Debug logging')

    parser = _UsageParser(
        description='Adaptive multipoint flux mixed finite elements for Darcy flow',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    %(prog)s solve --problem constant_patch
    %(prog)s solve --problem example71_r04 --uniform-levels 3
    %(prog)s adapt --problem example71_r01 --theta 0.8 --max-iterations 20
    %(prog)s adapt --problem example72 --mode uniform --max-iterations 6
    %(prog)s verify
    """
    )
    commands = parser.add_subparsers(dest='command', required=True, parser_class=_UsageParser)
    commands.add_parser('solve', parents=[common], help='Single solve and estimate')
    adapt = commands.add_parser('adapt', parents=[common], help='Adaptive or uniform refinement run')
    adapt.add_argument('--theta', type=float, help='Dörfler marking parameter in (0, 1]')
    adapt.add_argument('--mode', choices=REFINEMENT_MODES, help='Refinement mode')
    adapt.add_argument('--max-iterations', type=int, help='Number of solves')
    adapt.add_argument('--max-elements', type=int, help='Largest mesh to solve on')
    commands.add_parser('verify', parents=[common], help='Run the audit suite')

    return parser.parse_args(argv)


def _overrides(args) -> dict:
    return {
        'problem__problem': args.problem,
        'problem__uniform_levels': args.uniform_levels,
        'solver__method': args.method,
        'estimator__include_hot': False if args.no_hot else None,
        'output__output_dir': args.output,
        'adaptive__theta': getattr(args, 'theta', None),
        'adaptive__mode': getattr(args, 'mode', None),
        'adaptive__max_iterations': getattr(args, 'max_iterations', None),
        'adaptive__max_elements': getattr(args, 'max_elements', None),
        'debug_mode': True if args.debug else None,
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit status."""
    args = parse_arguments(argv)
    init(strip=not sys.stdout.isatty())

    try:
        app = DarcyAdaptiveApp(args.config, **_overrides(args))
        if args.command == 'solve':
            app.solve()
        elif args.command == 'adapt':
            app.adapt()
        elif not app.verify():
            return EXIT_NUMERICAL
        logger.info("Run completed successfully")
        return EXIT_OK

    except ValidationError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        iteration = getattr(e, 'iteration', None)
        where = f" (iteration {iteration})" if iteration is not None else ""
        logger.error(f"Numerical failure{where}: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"An error occurred: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
