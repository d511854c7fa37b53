"""
Matching and report commands for synthprint.

Commands:
- evaluate: Full protocol run over one or two manifests
- quality: Per-image metric report of a manifest
- score: Score an explicit pair list
"""

import sys
from pathlib import Path
from typing import Optional, Tuple

import click

from ..dataset import (
    EvaluateOptions,
    check_missing,
    evaluate,
    read_pair_list,
    templates_for_paths,
)
from ..evalharness import format_percent
from ..matcher import score_pair_list, settings_from_config
from ..minutiae import quality_report, write_quality_csv
from ..synthcore import read_manifest
from ..utils import (
    OutputFormat,
    format_count,
    format_quality_report,
    format_tar_far_rows,
    print_info,
    print_json,
    print_rows,
    print_success,
    print_warning,
    setup_logging,
)
from . import SynthContext, common_options, handle_errors, pass_context, resolve_format


def register_evaluate_commands(cli: click.Group) -> None:
    """Register evaluation commands with the CLI."""

    @cli.command('evaluate')
    @common_options
    @click.option('--manifest-a', '-a', type=click.Path(exists=True, dir_okay=False, path_type=Path),
                  required=True, help='Manifest of the dataset to evaluate')
    @click.option('--manifest-b', '-b', type=click.Path(exists=True, dir_okay=False, path_type=Path),
                  help='Second manifest: enables uniqueness comparison and privacy scan')
    @click.option('--threshold', '-t', 'thresholds', type=float, multiple=True,
                  help='Fixed threshold for the TAR/FAR table (repeatable)')
    @click.option('--far-target', type=click.FloatRange(min=0, min_open=True, max=100),
                  help='FAR target in percent for the per-dataset threshold')
    @click.option('--privacy-threshold', type=float,
                  help='Privacy scan threshold (default: FAR-target threshold of dataset A)')
    @click.option('--max-nonmated', type=click.IntRange(min=1),
                  help='Score a random subset of this many non-mated pairs')
    @click.option('--seed', type=int, default=0, show_default=True,
                  help='Seed for non-mated pair sampling')
    @click.option('--workers', '-w', type=click.IntRange(min=1), help='Worker processes')
    @click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False, path_type=Path),
                  required=True, help='Directory for report files')
    @pass_context
    @handle_errors
    def evaluate_cmd(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        manifest_a: Path,
        manifest_b: Optional[Path],
        thresholds: Tuple[float, ...],
        far_target: Optional[float],
        privacy_threshold: Optional[float],
        max_nonmated: Optional[int],
        seed: int,
        workers: Optional[int],
        out_dir: Path,
    ):
        """
        Evaluate one dataset, or two against each other.

        Writes quality_<a|b>.csv, scores_<a|b>_<mated|nonmated>.csv,
        tar_far.csv, histograms.csv and summary.json into OUT. Exits with
        code 1 when more than 1% of a manifest's images are missing.

        \b
        Examples:
          synthprint evaluate -a db2/manifest.jsonl --far-target 0.01 -o report
          synthprint evaluate -a db2/manifest.jsonl -b db3/manifest.jsonl -t 48 -o report
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        config = ctx.config_manager.get()
        options = EvaluateOptions(
            thresholds=tuple(thresholds) or tuple(config.thresholds),
            far_target=far_target if far_target is not None else config.far_target,
            workers=workers or config.workers,
            block_size=config.block_size,
            histogram_bins=config.histogram_bins,
            max_nonmated=max_nonmated,
            seed=seed,
            privacy_threshold=privacy_threshold,
            settings=settings_from_config(config.matcher_values()),
        )

        if not quiet:
            print_info(f"Evaluating with {options.workers} worker(s)...")
        summary = evaluate(manifest_a, out_dir, options, manifest_b)

        if fmt == OutputFormat.JSON:
            print_json(summary.to_dict())
            return

        if fmt == OutputFormat.TABLE:
            click.echo("\nPair protocol:")
        rows = [[d.name, d.quality.images, d.mated, d.nonmated] for d in summary.datasets]
        print_rows(["dataset", "images", "mated_pairs", "nonmated_pairs"], rows, fmt)
        if fmt == OutputFormat.TABLE:
            click.echo("\nTAR/FAR:")
        format_tar_far_rows(summary.tar_far_rows, fmt)

        if fmt == OutputFormat.TABLE:
            for d in summary.datasets:
                if d.far_threshold is not None and d.far_threshold.saturated:
                    print_warning(f"Dataset {d.name}: FAR target not reachable, threshold saturated")
            if summary.uniqueness_tv is not None:
                click.echo(f"\nNon-mated TV distance (a vs b): {summary.uniqueness_tv:.4f}")
            if summary.privacy is not None:
                p = summary.privacy
                click.echo(
                    f"Privacy scan: {format_count(p.matches_above_threshold)} of "
                    f"{format_count(p.pairs_compared)} pairs >= {p.threshold:g} "
                    f"(effective FAR {format_percent(p.effective_far)}%)"
                )
            print_success(f"Reports written to {out_dir}")

    @cli.command('quality')
    @common_options
    @click.argument('manifest', type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option('--workers', '-w', type=click.IntRange(min=1), help='Worker processes')
    @click.option('--csv', 'csv_path', type=click.Path(dir_okay=False, path_type=Path),
                  help='Also write the report to this CSV file')
    @pass_context
    @handle_errors
    def quality(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        manifest: Path,
        workers: Optional[int],
        csv_path: Optional[Path],
    ):
        """
        Report minutiae and quality metrics of a dataset (mean and std).

        The quality score is a proxy, not NFIQ2. Standard deviations are
        population values; the fingerprint area is a percentage of the frame.

        \b
        Examples:
          synthprint quality db2/manifest.jsonl
          synthprint quality db2/manifest.jsonl -f csv --csv quality.csv
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        records = check_missing(read_manifest(manifest), manifest.parent, manifest.name)
        report = quality_report(records, manifest.parent, workers or ctx.config_manager.get().workers)
        if csv_path:
            write_quality_csv(report, csv_path)
        format_quality_report(report, fmt, truncate_length)

    @cli.command('score')
    @common_options
    @click.argument('manifest', type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.argument('pairs', type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option('--workers', '-w', type=click.IntRange(min=1), help='Worker processes')
    @pass_context
    @handle_errors
    def score(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        manifest: Path,
        pairs: Path,
        workers: Optional[int],
    ):
        """
        Score the pairs listed in a CSV file (id_a,id_b header).

        Ids are image paths as written in the manifest. Prints
        (id_a, id_b, score, pairs) rows.

        \b
        Examples:
          synthprint score db2/manifest.jsonl pairs.csv -f csv > scores.csv
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        config = ctx.config_manager.get()
        wanted = read_pair_list(pairs)
        if not wanted:
            print_warning("Pair list is empty.")
            sys.exit(0)
        records = read_manifest(manifest)
        templates = templates_for_paths(records, manifest.parent,
                                        {p for pair in wanted for p in pair},
                                        workers or config.workers)
        missing = sorted({p for pair in wanted for p in pair} - set(templates))
        if missing:
            print_warning(f"{len(missing)} images could not be read; their pairs are skipped")
        rows = score_pair_list(
            templates, [p for p in wanted if p[0] in templates and p[1] in templates],
            settings_from_config(config.matcher_values())
        )
        print_rows(["id_a", "id_b", "score", "pairs"],
                   [[r.id_a, r.id_b, f"{r.score:.4f}", r.pairs] for r in rows],
                   fmt, truncate_length)
