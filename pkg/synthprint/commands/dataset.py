"""
Dataset housekeeping commands for synthprint.

Commands:
- ingest: Import external images into a dataset
- balance: Check live/spoof counts per material
- pad-export: Write balanced, subject-disjoint PAD train/test manifests
- cyclegan-loss: Evaluate the translator training objective
"""

import sys
from pathlib import Path
from typing import Optional

import click

from ..dataset import export_pad_split, ingest_images
from ..spoofsim import (
    LAMBDA_CYC,
    LAMBDA_ID,
    LIVDET_TRAINING_SIZES,
    CycleGANObjective,
    cyclegan_objective,
    validate_balanced,
)
from ..synthcore import FingerClass, Material, read_manifest
from ..utils import (
    OutputFormat,
    format_balance_report,
    format_count,
    print_json,
    print_rows,
    print_success,
    print_warning,
    setup_logging,
)
from . import SynthContext, common_options, handle_errors, pass_context, resolve_format
from .generate import MATERIAL_CHOICES


def register_dataset_commands(cli: click.Group) -> None:
    """Register dataset housekeeping commands with the CLI."""

    @cli.command('ingest')
    @common_options
    @click.argument('src_dir', type=click.Path(exists=True, file_okay=False, path_type=Path))
    @click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False, path_type=Path),
                  required=True, help='Dataset directory (manifest is created or extended)')
    @click.option('--class', '-c', 'finger_class', required=True,
                  help='Finger class of the images: 1-10 or a label such as Right-Thumb')
    @click.option('--material', '-m', type=click.Choice(MATERIAL_CHOICES, case_sensitive=False),
                  required=True, help='Presentation material of the images')
    @click.option('--subject-start', type=click.IntRange(min=1), default=1, show_default=True,
                  help='Subject id of the first image')
    @click.option('--impression', type=click.IntRange(min=1), default=1, show_default=True,
                  help='Impression number given to every image')
    @click.option('--pad', is_flag=True, help='White-pad to a square instead of center-cropping')
    @pass_context
    @handle_errors
    def ingest(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        src_dir: Path,
        out_dir: Path,
        finger_class: str,
        material: str,
        subject_start: int,
        impression: int,
        pad: bool,
    ):
        """
        Import images from SRC_DIR, one subject per image.

        Use this to bring the outputs of a trained image translator, or any
        other 8-bit prints, into a dataset so they can be balanced and evaluated.

        \b
        Examples:
          synthprint ingest translated/ -o pad_set -c 1 -m PlayDoh
          synthprint ingest scans/ -o real -c Right-Thumb -m Live --pad
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        added = ingest_images(src_dir, out_dir, FingerClass.parse(finger_class),
                              Material.parse(material), subject_start, impression, pad)
        if fmt != OutputFormat.TABLE:
            print_rows(["path", "subject"], [[r.path, r.subject] for r in added], fmt, truncate_length)
            return
        if not added:
            print_warning(f"No readable images found in {src_dir}")
            return
        print_success(f"Ingested {format_count(len(added))} images into {out_dir}")

    @cli.command('balance')
    @common_options
    @click.argument('manifest', type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option('--reference', is_flag=True,
                  help='Check each material against the public liveness training set sizes')
    @pass_context
    @handle_errors
    def balance(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        manifest: Path,
        reference: bool,
    ):
        """
        Check that every spoof material matches the live count.

        With --reference each material must instead hold exactly as many
        spoofs as its public training set, with enough live images to pair.
        Exits with code 1 when any material is unbalanced.

        \b
        Examples:
          synthprint balance pad_set/manifest.jsonl
          synthprint balance pad_set/manifest.jsonl --reference
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        report = validate_balanced(read_manifest(manifest), LIVDET_TRAINING_SIZES if reference else None)
        format_balance_report(report, fmt)
        if not report.balanced:
            if fmt == OutputFormat.TABLE:
                print_warning("Dataset is not balanced.")
            sys.exit(1)
        if fmt == OutputFormat.TABLE and report.rows:
            if reference:
                print_success("Balanced against the reference training set sizes")
            else:
                print_success(f"Balanced: {format_count(report.live)} live images per material")

    @cli.command('pad-export')
    @common_options
    @click.argument('manifest', type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False, path_type=Path),
                  help='Directory for the split manifests (default: next to MANIFEST)')
    @click.option('--test-fraction', type=click.FloatRange(min=0, max=1, min_open=True, max_open=True),
                  default=0.2, show_default=True, help='Share of subjects held out for testing')
    @click.option('--seed', type=int, default=0, show_default=True, help='Split seed')
    @pass_context
    @handle_errors
    def pad_export(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        manifest: Path,
        out_dir: Optional[Path],
        test_fraction: float,
        seed: int,
    ):
        """
        Export a balanced, subject-disjoint live/spoof split for PAD training.

        \b
        Examples:
          synthprint pad-export pad_set/manifest.jsonl --test-fraction 0.25
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        split = export_pad_split(read_manifest(manifest), out_dir or manifest.parent,
                                 test_fraction, seed)
        rows = []
        for name, part in (("train", split.train), ("test", split.test)):
            live = sum(1 for r in part if not r.material.is_spoof)
            rows.append([name, len(part.subjects()), live, len(part) - live])
        print_rows(["split", "subjects", "live", "spoof"], rows, fmt)

    @cli.command('cyclegan-loss')
    @common_options
    @click.option('--gan-ab', type=click.FloatRange(min=0), required=True,
                  help='Adversarial loss of the live-to-spoof generator')
    @click.option('--gan-ba', type=click.FloatRange(min=0), required=True,
                  help='Adversarial loss of the spoof-to-live generator')
    @click.option('--cyc', type=click.FloatRange(min=0), required=True, help='Cycle-consistency loss')
    @click.option('--id', 'identity', type=click.FloatRange(min=0), required=True, help='Identity loss')
    @click.option('--lambda-cyc', type=click.FloatRange(min=0), default=LAMBDA_CYC, show_default=True,
                  help='Cycle-consistency weight')
    @click.option('--lambda-id', type=click.FloatRange(min=0), default=LAMBDA_ID, show_default=True,
                  help='Identity weight')
    @pass_context
    @handle_errors
    def cyclegan_loss(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        gan_ab: float,
        gan_ba: float,
        cyc: float,
        identity: float,
        lambda_cyc: float,
        lambda_id: float,
    ):
        """
        Compute the total translator objective from its loss components.

        \b
        Examples:
          synthprint cyclegan-loss --gan-ab 0.5 --gan-ba 0.5 --cyc 2 --id 2
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        obj = CycleGANObjective(gan_ab, gan_ba, cyc, identity, lambda_cyc, lambda_id)
        total = cyclegan_objective(obj)
        if fmt == OutputFormat.JSON:
            print_json({
                "l_gan_ab": gan_ab,
                "l_gan_ba": gan_ba,
                "l_cyc": cyc,
                "l_id": identity,
                "lambda_cyc": lambda_cyc,
                "lambda_id": lambda_id,
                "total": total,
            })
        elif fmt == OutputFormat.CSV:
            print_rows(["total"], [[f"{total:g}"]], fmt)
        else:
            click.echo(f"Total objective: {total:g}")
