"""
Dataset generation command for synthprint.
"""

from pathlib import Path
from typing import Optional

import click

from ..dataset import GenerateSpec, generate_dataset, parse_class_list
from ..synthcore import Material
from ..utils import format_count, print_info, print_rows, print_success, setup_logging
from . import SynthContext, common_options, handle_errors, pass_context, resolve_format

MATERIAL_CHOICES = [m.value for m in Material]


def register_generate_commands(cli: click.Group) -> None:
    """Register dataset generation commands with the CLI."""

    @cli.command('generate')
    @common_options
    @click.option('--classes', '-c', default='1-10', show_default=True,
                  help='Finger classes, e.g. 1-10, 1,6 or 2-4,7')
    @click.option('--subjects', '-n', type=click.IntRange(min=1), required=True,
                  help='Subjects per class')
    @click.option('--impressions', '-i', type=click.IntRange(min=1), default=3, show_default=True,
                  help='Impressions per finger')
    @click.option('--material', '-m', type=click.Choice(MATERIAL_CHOICES, case_sensitive=False),
                  default='Live', show_default=True, help='Presentation material')
    @click.option('--seed', '-s', type=int, required=True, help='Master seed; all randomness flows from it')
    @click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False, path_type=Path),
                  required=True, help='Output directory')
    @click.option('--workers', '-w', type=click.IntRange(min=1), help='Worker processes')
    @click.option('--with-live', is_flag=True, help='For spoof materials, also keep the live images')
    @pass_context
    @handle_errors
    def generate(
        ctx: SynthContext,
        verbose: bool,
        quiet: bool,
        output_format: Optional[str],
        truncate_length: int,
        classes: str,
        subjects: int,
        impressions: int,
        material: str,
        seed: int,
        out_dir: Path,
        workers: Optional[int],
        with_live: bool,
    ):
        """
        Generate a conditioned synthetic fingerprint dataset.

        Images are written to OUT/<material>/<class>/<subject>_<impression>.png
        with OUT/manifest.jsonl alongside. The same options always produce
        byte-identical output, whatever the worker count.

        \b
        Examples:
          synthprint generate -n 50 -i 3 --seed 7 -o db_live
          synthprint generate -c 1 -n 1 -i 1 --seed 1 -o one
          synthprint generate -n 20 -m PlayDoh --with-live --seed 3 -o pad_set -w 4
        """
        setup_logging(verbose, quiet)
        fmt = resolve_format(ctx, output_format)
        spec = GenerateSpec(
            classes=parse_class_list(classes),
            subjects_per_class=subjects,
            impressions=impressions,
            material=Material.parse(material),
            master_seed=seed,
            out_dir=out_dir,
        )
        workers = workers or ctx.config_manager.get().workers

        if not quiet:
            print_info(
                f"Generating {format_count(spec.total)} {spec.material.value} images "
                f"({len(spec.classes)} classes x {subjects} subjects x {impressions} impressions)..."
            )
        manifest = generate_dataset(spec, workers=workers, with_live=with_live)

        if fmt.value != "table":
            rows = [[m.value, len(manifest.filter(material=m))] for m in manifest.materials()]
            print_rows(["material", "images"], rows, fmt)
            return
        print_success(f"Wrote {format_count(len(manifest))} images and manifest to {out_dir}")
