"""
synthprint CLI Commands Package.

This package contains all CLI command modules organized by concern:
- settings: Configuration commands (configure, config-clear)
- generate: Dataset generation (generate)
- evaluate: Matching and report commands (evaluate, quality, score)
- dataset: Dataset housekeeping (ingest, balance, pad-export, cyclegan-loss)
"""

import logging
import sys
from functools import wraps
from typing import Any, Callable, Optional

import click

from ..config import ConfigManager
from ..exceptions import SynthprintError
from ..utils import (
    OutputFormat,
    print_csv,
    print_error,
    print_info,
    print_json,
    print_success,
    print_table,
    print_warning,
    setup_logging,
)

logger = logging.getLogger(__name__)


# ============================================================================
# CLI Context
# ============================================================================

class SynthContext:
    """CLI context object for sharing state between commands."""

    def __init__(self) -> None:
        self.config_manager: ConfigManager = None  # type: ignore[assignment]
        self.verbose: bool = False
        self.quiet: bool = False
        self.output_format: OutputFormat = OutputFormat.TABLE


pass_context = click.make_pass_decorator(SynthContext, ensure=True)


# ============================================================================
# Common Decorators
# ============================================================================

def common_options(f: Callable[..., Any]) -> Callable[..., Any]:
    """Common options for all commands."""
    f = click.option(
        '-v', '--verbose',
        is_flag=True,
        help='Enable verbose output'
    )(f)
    f = click.option(
        '-q', '--quiet',
        is_flag=True,
        help='Suppress non-essential output'
    )(f)
    f = click.option(
        '-f', '--format',
        'output_format',
        type=click.Choice(['table', 'json', 'csv']),
        default=None,
        help='Output format (default: from configuration, else table)'
    )(f)
    f = click.option(
        '--truncate',
        'truncate_length',
        type=int,
        default=50,
        help='Max string length in table output (default: 50, 0=no truncation)'
    )(f)
    return f


def resolve_format(ctx: SynthContext, output_format: Optional[str]) -> OutputFormat:
    """Command-line format first, then the configured default."""
    return OutputFormat(output_format or ctx.config_manager.get().output_format)


def handle_errors(f: Callable[..., Any]) -> Callable[..., Any]:
    """Report SynthprintError as a red status line and exit with code 1."""
    @wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except SynthprintError as e:
            logger.debug("Command failed", exc_info=True)
            print_error(e.message, e.details)
            sys.exit(1)

    return wrapper


# ============================================================================
# Exports
# ============================================================================

__all__ = [
    'SynthContext',
    'pass_context',
    'common_options',
    'resolve_format',
    'handle_errors',
    'setup_logging',
    'print_success',
    'print_error',
    'print_info',
    'print_warning',
    'print_json',
    'print_csv',
    'print_table',
    'logger',
]
