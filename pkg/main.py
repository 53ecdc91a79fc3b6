import argparse
import json
import logging
import sys
from collections.abc import Sequence

from app.config.schemas import CONFIG_MODELS, load_analysis_config, load_study_config
from app.config.settings import settings
from app.pipeline import run_analysis, run_simulate, run_study, schema_document
from app.utils.exceptions import EXIT_CODES, LagEffectsError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


class LagEffectsCli:
    """Batch front end: ``analyze``, ``study``, ``simulate`` and ``schema``.

    Each sub-command hands a validated config to :mod:`app.pipeline`. Failures
    exit with a category-specific code and one JSON line on stderr.
    """

    def __init__(self) -> None:
        self.parser = self._build_parser()

    @staticmethod
    def _build_parser() -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="lag-effects", description="Lag-effect estimation for service systems.")
        commands = parser.add_subparsers(dest="command", required=True)

        analyze = commands.add_parser("analyze", help="Estimate lag effects from panel CSV data.")
        analyze.add_argument("--config", required=True, help="Analysis YAML document.")

        study = commands.add_parser("study", help="Run simulation suites against a scenario.")
        study.add_argument("--config", required=True, help="Study YAML document.")
        study.add_argument("--threads", type=int, default=None, help="Worker processes (default: LAG_EFFECTS_THREADS).")

        simulate = commands.add_parser("simulate", help="Export simulated panels as CSV.")
        simulate.add_argument("--scenario", required=True, help="Scenario YAML document.")
        simulate.add_argument("--panels", type=int, required=True)
        simulate.add_argument("--seed", type=int, required=True)
        simulate.add_argument("--out", required=True, help="Output CSV path.")

        schema = commands.add_parser("schema", help="Print the JSON schema of a config document.")
        schema.add_argument("name", choices=sorted(CONFIG_MODELS))
        return parser

    def run(self, argv: Sequence[str] | None = None) -> int:
        args = self.parser.parse_args(argv)
        try:
            self._dispatch(args)
        except LagEffectsError as e:
            return self._fail(e.category, e)
        except OSError as e:
            return self._fail("io", e)
        except ValueError as e:
            return self._fail("data", e)
        return 0

    def _dispatch(self, args: argparse.Namespace) -> None:
        if args.command == "analyze":
            result = run_analysis(load_analysis_config(args.config))
            logger.info("Analysis finished: %s", ", ".join(str(p) for p in result.outputs))
        elif args.command == "study":
            if args.threads is not None and args.threads < 1:
                raise ValueError("--threads must be >= 1")
            result = run_study(load_study_config(args.config), threads=args.threads)
            logger.info("Study finished: %s", ", ".join(str(p) for p in result.outputs))
        elif args.command == "simulate":
            run_simulate(args.scenario, args.panels, args.seed, args.out)
        else:
            sys.stdout.write(schema_document(args.name) + "\n")

    @staticmethod
    def _fail(category: str, error: BaseException) -> int:
        if settings.debug and not settings.is_production:
            logger.exception("Command failed")
        notes = getattr(error, "__notes__", [])
        message = "; ".join([str(error), *notes])
        payload = {"category": category, "error": type(error).__name__, "message": message}
        sys.stderr.write(json.dumps(payload) + "\n")
        return EXIT_CODES.get(category, 1)


def main(argv: Sequence[str] | None = None) -> int:
    """Configure logging from settings and run the CLI; returns the exit code."""
    logging.basicConfig(
        level=settings.effective_log_level,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    return LagEffectsCli().run(argv)


if __name__ == "__main__":
    sys.exit(main())
