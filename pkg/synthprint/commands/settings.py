"""
Configuration/settings commands for synthprint.

Commands:
- configure: Configure evaluation defaults
- config-clear: Clear all configuration
"""

from typing import Optional, Tuple

import click

from . import SynthContext, handle_errors, pass_context, print_info, print_success
from ..config import DEFAULT_FAR_TARGET


def register_settings_commands(cli: click.Group) -> None:
    """Register configuration commands with the CLI."""

    @cli.command('configure')
    @click.option('--workers', '-w', type=click.IntRange(min=1), help='Default worker processes')
    @click.option('--block-size', type=click.IntRange(min=1), help='Pairs per scoring block')
    @click.option('--bins', 'histogram_bins', type=click.IntRange(min=1), help='Histogram bins')
    @click.option(
        '--far-target',
        type=click.FloatRange(min=0, min_open=True, max=100),
        help=f'Default FAR target in percent (default: {DEFAULT_FAR_TARGET})'
    )
    @click.option(
        '--threshold', '-t',
        'thresholds',
        type=float,
        multiple=True,
        help='Fixed threshold for the TAR/FAR table (repeatable; replaces the stored list)'
    )
    @click.option('--max-rotation', 'max_rotation_deg', type=click.FloatRange(min=0, max=180),
                  help='Alignment rotation search bound in degrees')
    @click.option('--pair-distance', 'pair_distance_px', type=click.FloatRange(min=0),
                  help='Minutia pairing distance in pixels')
    @click.option('--pair-angle', 'pair_angle_deg', type=click.FloatRange(min=0, max=180),
                  help='Minutia pairing angle tolerance in degrees')
    @click.option('--format', 'output_format', type=click.Choice(['table', 'json', 'csv']),
                  help='Default output format')
    @click.option('--show', is_flag=True, help='Show current configuration')
    @pass_context
    @handle_errors
    def configure(
        ctx: SynthContext,
        workers: Optional[int],
        block_size: Optional[int],
        histogram_bins: Optional[int],
        far_target: Optional[float],
        thresholds: Tuple[float, ...],
        max_rotation_deg: Optional[float],
        pair_distance_px: Optional[float],
        pair_angle_deg: Optional[float],
        output_format: Optional[str],
        show: bool
    ):
        """
        Configure evaluation defaults.

        Values given on the command line of a command always override these.

        \b
        Examples:
          synthprint configure --workers 4 --far-target 0.01
          synthprint configure -t 48 -t 75
          synthprint configure --show
        """
        config_manager = ctx.config_manager

        if show:
            config = config_manager.get()
            click.echo("\nCurrent Configuration:")
            click.echo(f"  Workers:         {config.workers}")
            click.echo(f"  Block Size:      {config.block_size} pairs")
            click.echo(f"  Histogram Bins:  {config.histogram_bins}")
            click.echo(f"  FAR Target:      {config.far_target}%")
            click.echo(f"  Thresholds:      {', '.join(f'{t:g}' for t in config.thresholds) or '(none)'}")
            click.echo(f"  Max Rotation:    {config.max_rotation_deg:g} deg")
            click.echo(f"  Pair Distance:   {config.pair_distance_px:g} px")
            click.echo(f"  Pair Angle:      {config.pair_angle_deg:g} deg")
            click.echo(f"  Output Format:   {config.output_format}")
            click.echo(f"  Config Path:     {config_manager.get_config_path()}")
            return

        updates = {
            'workers': workers,
            'block_size': block_size,
            'histogram_bins': histogram_bins,
            'far_target': far_target,
            'max_rotation_deg': max_rotation_deg,
            'pair_distance_px': pair_distance_px,
            'pair_angle_deg': pair_angle_deg,
            'output_format': output_format,
        }
        updates = {k: v for k, v in updates.items() if v is not None}
        if thresholds:
            updates['thresholds'] = sorted(set(thresholds))

        if updates:
            config_manager.update(**updates)
            print_success("Configuration saved successfully.")
        else:
            print_info("No changes made.")

    @cli.command('config-clear')
    @click.confirmation_option(prompt='Are you sure you want to clear all configuration?')
    @pass_context
    def config_clear(ctx: SynthContext):
        """Clear all stored configuration."""
        ctx.config_manager.clear()
        print_success("Configuration cleared.")
