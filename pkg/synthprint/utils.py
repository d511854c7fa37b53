"""
Utility functions for synthprint.

Provides helpers for console output: status lines, tables, JSON, CSV and
the formatters for the report types shown by the commands.
"""

import csv
import io
import json
import logging
import re
from enum import Enum
from typing import Any, List, Optional, Sequence

import click

from .evalharness import TarFarRow, format_percent
from .minutiae import QualityReport
from .spoofsim import BalanceReport


class OutputFormat(str, Enum):
    """Output format options."""
    TABLE = "table"
    JSON = "json"
    CSV = "csv"


_ANSI = re.compile(r'\x1b\[[0-9;]*m')


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """
    Configure logging based on verbosity settings.

    Args:
        verbose: Enable verbose (debug) output
        quiet: Suppress all but error output
    """
    if quiet:
        level = logging.ERROR
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s' if verbose else '%(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    logging.getLogger("synthprint").setLevel(level)

    # Reduce noise from third-party libraries
    logging.getLogger("PIL").setLevel(logging.WARNING)


def truncate_string(s: Optional[str], max_length: int = 50) -> str:
    """
    Truncate a string to maximum length.

    Args:
        s: String to truncate
        max_length: Maximum length (0 disables truncation)

    Returns:
        Truncated string
    """
    if s is None:
        return "-"
    if max_length <= 0 or len(s) <= max_length:
        return s
    return s[:max_length - 3] + "..."


def format_count(n: int) -> str:
    """Format an integer count with thousands separators."""
    return f"{n:,}"


def _visible_len(s: str) -> int:
    """Get visible length of string (excluding ANSI codes)."""
    return len(_ANSI.sub('', str(s)))


def print_table(
    headers: List[str],
    rows: Sequence[Sequence[Any]],
    widths: Optional[List[int]] = None
) -> None:
    """
    Print a formatted table.

    Args:
        headers: Column headers
        rows: Table rows
        widths: Optional column widths
    """
    if not widths:
        widths = [len(h) for h in headers]
        for row in rows:
            for i, cell in enumerate(row):
                if i < len(widths):
                    widths[i] = max(widths[i], _visible_len(str(cell)))

    header_line = " | ".join(h.ljust(widths[i]) for i, h in enumerate(headers))
    click.echo(header_line)
    click.echo("-" * len(header_line))

    for row in rows:
        cells = []
        for i, cell in enumerate(row):
            cell_str = str(cell)
            cells.append(cell_str + " " * (widths[i] - _visible_len(cell_str)))
        click.echo(" | ".join(cells))


def print_json(data: Any, indent: int = 2) -> None:
    """
    Print data as formatted JSON.

    Args:
        data: Data to print
        indent: Indentation level
    """
    click.echo(json.dumps(data, indent=indent, default=str))


def print_csv(headers: List[str], rows: Sequence[Sequence[Any]]) -> None:
    """
    Print data as CSV format.

    Args:
        headers: List of column headers
        rows: List of row data (each row is a list of values)
    """
    output = io.StringIO()
    writer = csv.writer(output)
    writer.writerow(headers)
    for row in rows:
        writer.writerow([_ANSI.sub('', str(cell)) for cell in row])
    click.echo(output.getvalue().rstrip())


def print_success(message: str) -> None:
    """Print a success message."""
    click.secho(f"✓ {message}", fg="green")


def print_error(message: str, details: Optional[str] = None) -> None:
    """Print an error message."""
    click.secho(f"✗ {message}", fg="red", err=True)
    if details:
        click.secho(f"  {details}", fg="red", dim=True, err=True)


def print_warning(message: str) -> None:
    """Print a warning message."""
    click.secho(f"⚠ {message}", fg="yellow")


def print_info(message: str) -> None:
    """Print an info message."""
    click.secho(f"ℹ {message}", fg="blue")


def print_rows(
    headers: List[str],
    rows: Sequence[Sequence[Any]],
    output_format: OutputFormat,
    truncate_length: int = 50
) -> None:
    """Print rows as a table, CSV, or a JSON list of objects keyed by header."""
    if output_format == OutputFormat.JSON:
        print_json([dict(zip(headers, row)) for row in rows])
    elif output_format == OutputFormat.CSV:
        print_csv(headers, rows)
    else:
        print_table(headers, [
            [truncate_string(c, truncate_length) if isinstance(c, str) else c for c in row]
            for row in rows
        ])


def format_quality_report(
    report: QualityReport,
    output_format: OutputFormat,
    truncate_length: int = 50
) -> None:
    """
    Print the seven per-image metrics as (metric, mean, std) rows.

    Standard deviations are population values.
    """
    if output_format == OutputFormat.JSON:
        print_json({
            "images": report.images,
            "skipped": report.skipped,
            "std": "population",
            "metrics": {label: {"mean": mean, "std": std} for label, mean, std in report.rows()},
        })
        return
    rows = [[label, f"{mean:.2f}", f"{std:.2f}"] for label, mean, std in report.rows()]
    if output_format == OutputFormat.CSV:
        print_csv(["metric", "mean", "std_population"], rows)
        return
    print_table(["Metric", "Mean", "Std (population)"], rows)
    click.echo(f"\n{format_count(report.images)} images, {report.skipped} skipped")


def format_tar_far_rows(rows: Sequence[TarFarRow], output_format: OutputFormat) -> None:
    """Print TAR/FAR rows with raw accept counts."""
    headers = ["Threshold", "Dataset", "TAR (%)", "FAR (%)", "Genuine", "Imposter", "Source"]
    data = [
        [f"{r.threshold:g}", r.dataset, format_percent(r.point.tar), format_percent(r.point.far),
         f"{r.point.genuine_accepted}/{r.point.genuine_total}",
         f"{r.point.imposter_accepted}/{r.point.imposter_total}", r.source]
        for r in rows
    ]
    print_rows(headers, data, output_format)


def format_balance_report(report: BalanceReport, output_format: OutputFormat) -> None:
    """Print live vs spoof counts per material with a verdict."""
    if output_format == OutputFormat.TABLE and not report.rows:
        print_info("No spoof materials in manifest.")
        return
    if report.has_targets:
        headers = ["Material", "Live", "Spoof", "Target", "Deficit", "Balanced"]
        data = [[r.material.value, r.live, r.spoof, r.expected, r.deficit, "yes" if r.balanced else "no"]
                for r in report.rows]
    else:
        headers = ["Material", "Live", "Spoof", "Deficit", "Balanced"]
        data = [[r.material.value, r.live, r.spoof, r.deficit, "yes" if r.balanced else "no"]
                for r in report.rows]
    print_rows(headers, data, output_format)
