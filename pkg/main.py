import argparse
import logging
import sys
from typing import List, Optional

import config
from core.exceptions import (
    ArchiveError,
    ConfigurationError,
    DegenerateInputError,
    InputError,
    ParameterError,
    PipelineError,
    ShapeError,
    TrainingError,
    UsageError,
)
from handlers.decompose import setup_decompose_handlers
from handlers.plan import setup_plan_handlers
from handlers.report import setup_report_handlers
from handlers.training import setup_training_handlers
from utils.messages import Messages


logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PIPELINE = 3

DATA_ERRORS = (
    ConfigurationError,
    InputError,
    ShapeError,
    ParameterError,
    DegenerateInputError,
    ArchiveError,
    OSError,
)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad arguments."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="dsee", description=Messages.DESCRIPTION)
    subparsers = parser.add_subparsers(dest="command", parser_class=CliParser)
    subparsers.required = True

    setup_decompose_handlers(subparsers)
    setup_plan_handlers(subparsers)
    setup_training_handlers(subparsers)
    setup_report_handlers(subparsers)
    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        config.validate_config()
        args = parser.parse_args(argv)
        args.handler(args)
    except UsageError as e:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(Messages.ERROR_USAGE.format(error=e), file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, PipelineError) as e:
        logger.error(f"Pipeline failure: {e}")
        print(Messages.ERROR_PIPELINE.format(error=e), file=sys.stderr)
        return EXIT_PIPELINE
    except DATA_ERRORS as e:
        print(Messages.format_error(str(e)), file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(Messages.format_error(str(e)), file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    """Entry point."""
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
