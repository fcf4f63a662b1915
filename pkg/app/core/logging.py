import logging
import sys

import structlog

from app.core.config import Settings, settings as default_settings


def log_level(settings: Settings = default_settings) -> int:
    """debug forces DEBUG; production never logs below WARNING otherwise"""
    if settings.debug:
        return logging.DEBUG
    level = getattr(logging, settings.log_level.upper(), logging.INFO)
    if settings.environment == "production":
        level = max(level, logging.WARNING)
    return level


def configure_logging(settings: Settings = default_settings) -> None:
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level(settings)),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )


def progress_enabled(settings: Settings = default_settings) -> bool:
    return settings.environment != "production" and sys.stderr.isatty()
