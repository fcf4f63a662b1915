"""
Command-line entry point: python -m app.main <command> ...
"""
import argparse
import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from app.cli import data, edit, evaluate, train
from app.core.config import settings
from app.core.errors import EngineError, UsageError
from app.core.logging import configure_logging

logger = structlog.get_logger()


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage problems as UsageError so they map to exit code 1"""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="sgdm", description=settings.app_name)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (data, train, edit, evaluate):
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging(settings)
    try:
        args = build_parser().parse_args(argv)
        logger.info("Command started", command=args.command, environment=settings.environment)
        code = args.handler(args)
        logger.info("Command finished", command=args.command)
        return code
    except EngineError as exc:
        logger.error("Command failed", error=str(exc), error_type=type(exc).__name__, exit_code=exc.exit_code)
        return exc.exit_code
    except ValidationError as exc:
        logger.error("Invalid settings", error=str(exc), error_type="ValidationError", exit_code=1)
        return 1
    except OSError as exc:
        logger.error("I/O failure", error=str(exc), error_type=type(exc).__name__)
        return 1


if __name__ == "__main__":
    sys.exit(main())
