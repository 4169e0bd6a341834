"""
Command-line interface.

Exit codes: 0 on success, 1 for usage and configuration errors, 2 for data or
file-format errors and 3 for numerical failures.
"""

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .config import RunConfig
from .egomotion import SE2Pose, warp_bev
from .geometry import encode_observation
from .instances import make_labels
from .metrics import LONG_RANGE, SHORT_RANGE, VpqInput, vpq_breakdown
from .pipeline import label_heads, run_pipeline
from .probabilistic import (
    DiagonalGaussian,
    kalman_log_evidence,
    kl_diag,
    lgssm_filter,
    random_model,
    sample_trajectory,
    sequential_free_energy,
)
from .synth import SceneConfig, default_rig, load_dataset, make_dataset
from .tracking import decode_sequence, decode_step
from .util import NumericalError

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class BevkitGroup(click.Group):
    """A click group mapping library exceptions onto exit codes."""

    def parse_args(self, ctx, args):  # noqa D102
        try:
            return super().parse_args(ctx, args)
        except click.UsageError as err:
            err.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx):  # noqa D102
        try:
            return super().invoke(ctx)
        except click.UsageError as err:
            err.exit_code = EXIT_USAGE
            raise
        except NumericalError as err:
            click.echo(f"Error: {err}", err=True)
            ctx.exit(EXIT_NUMERICAL)
        except (ValueError, OSError) as err:
            click.echo(f"Error: {err}", err=True)
            ctx.exit(EXIT_DATA)


def _config(ctx) -> RunConfig:
    return ctx.find_object(RunConfig)


def _dump(data, output) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if output is None:
        click.echo(text)
    else:
        Path(output).write_text(text + "\n")


@click.group(cls=BevkitGroup)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    help="JSON run configuration; flags given on the command line take precedence.",
)
@click.option("--seed", type=int, default=None, help="Seed of every random draw.")
@click.option("--grid-res", type=float, default=None, help="BeV cell size in meters.")
@click.option(
    "--grid-extent", type=float, default=None, help="BeV grid side length in meters."
)
@click.option("--dmin", type=float, default=None, help="Smallest depth in meters.")
@click.option("--dmax", type=float, default=None, help="Largest depth in meters.")
@click.option("--dsize", type=float, default=None, help="Depth bin size in meters.")
@click.option("--center-threshold", type=float, default=None)
@click.option("--nms-window", type=int, default=None)
@click.option(
    "--match-distance",
    type=float,
    default=None,
    help="Gating distance of tracking in meters.",
)
@click.option("--beta", type=float, default=None, help="Weight of the KL terms.")
@click.option(
    "--threads",
    type=int,
    default=None,
    help="Worker threads; defaults to BEVKIT_THREADS or 1 and is capped by it.",
)
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def cli(
    ctx,
    config_path,
    seed,
    grid_res,
    grid_extent,
    dmin,
    dmax,
    dsize,
    center_threshold,
    nms_window,
    match_distance,
    beta,
    threads,
    verbose,
):
    """Bird's-eye-view perception and world-model toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = RunConfig.from_json(config_path) if config_path else RunConfig()
        config = config.with_overrides(
            subcommand=ctx.invoked_subcommand,
            seed=seed,
            beta=beta,
            threads=threads,
            grid_resolution=grid_res,
            grid_extent=grid_extent,
            bins_dmin=dmin,
            bins_dmax=dmax,
            bins_dsize=dsize,
            decode_center_threshold=center_threshold,
            decode_nms_window=nms_window,
            decode_match_distance=match_distance,
        )
    except (TypeError, ValueError) as err:
        raise click.UsageError(str(err))
    ctx.obj = config


@cli.command()
@click.option("--vehicles", type=int, default=3, show_default=True)
@click.option("--horizon", type=int, default=6, show_default=True)
@click.option("--dt", type=float, default=0.5, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
@click.pass_context
def synth(ctx, vehicles, horizon, dt, output):
    """Simulate a scene and write it as a bundle with horizon + 1 steps."""
    config = _config(ctx)
    rig = io.Rig(default_rig().cameras, config.depth_bins(), config.grid_spec())
    scene = SceneConfig.random(config.seed, vehicles, horizon, dt, rig=rig)
    make_dataset(scene, output, config.thread_count())


@cli.command()
@click.argument("bundle", type=click.Path(exists=True, file_okay=False))
@click.option("--step", type=int, default=0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def lift(ctx, bundle, step, output):
    """Lift and splat every camera of one step into a BeV .bgrid."""
    dataset = load_dataset(bundle)
    if not 0 <= step < len(dataset.cameras):
        raise click.BadParameter(f"step must lie in [0, {len(dataset.cameras)}).")
    rig = dataset.rig
    bev = encode_observation(
        list(zip(dataset.cameras[step], rig.cameras)),
        rig.bins,
        rig.grid,
        _config(ctx).thread_count(),
    )
    io.write_bgrid(output, bev)


@cli.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--yaw", type=float, default=0.0, help="Rotation in radians.")
@click.option("--tx", type=float, default=0.0, help="Translation along x in meters.")
@click.option("--ty", type=float, default=0.0, help="Translation along y in meters.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def warp(ctx, input_path, yaw, tx, ty, output):
    """Warp a BeV .bgrid by a planar rigid transform."""
    feature = io.read_bgrid(input_path)
    warped = warp_bev(feature, SE2Pose(yaw, tx, ty), _config(ctx).grid_spec())
    io.write_bgrid(output, warped)


@cli.command()
@click.argument("bundle", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
@click.pass_context
def decode(ctx, bundle, output):
    """Decode every step of a bundle independently (ids 1..n per step)."""
    params = _config(ctx).decode_params()
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    for t, heads in enumerate(label_heads(load_dataset(bundle))):
        _, inst = decode_step(heads, params)
        io.write_instance_map(out / f"t{t:03d}.bgrid", inst)


@cli.command()
@click.argument("bundle", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
@click.pass_context
def track(ctx, bundle, output):
    """Decode and track a bundle; writes instance maps and matches.json."""
    config = _config(ctx)
    dataset = load_dataset(bundle)
    maps, log = decode_sequence(
        label_heads(dataset),
        config.decode_params(),
        resolution=dataset.rig.grid.resolution,
        n_threads=config.thread_count(),
        return_log=True,
    )
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    for t, inst in enumerate(maps):
        io.write_instance_map(out / f"t{t:03d}.bgrid", inst)
    io.write_match_log(out / "matches.json", log)


def _read_map_dir(path) -> list:
    files = sorted(Path(path).glob("*.bgrid"))
    if not files:
        raise FileNotFoundError(f"No .bgrid files in {path}.")
    return [io.read_instance_map(f) for f in files]


@cli.command()
@click.option("--pred", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    "--range",
    "range_name",
    type=click.Choice(["short", "long"]),
    default=None,
    help="Crop to the central 30 m (short) or 100 m (long) window.",
)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def vpq(ctx, pred, gt, range_name, output):
    """Video panoptic quality of predicted against ground-truth map sequences."""
    config = _config(ctx)
    pred_maps, gt_maps = _read_map_dir(pred), _read_map_dir(gt)
    range_m = {None: None, "short": SHORT_RANGE, "long": LONG_RANGE}[range_name]
    result = vpq_breakdown(
        VpqInput(pred_maps, gt_maps, len(gt_maps) - 1),
        grid=config.grid_spec(),
        range_m=range_m,
        n_threads=config.thread_count(),
    )
    _dump(result.to_dict(), output)


@cli.command("elbo-demo")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--trajectory", "traj_path", type=click.Path(exists=True, dir_okay=False)
)
@click.option("--steps", type=int, default=5, show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def elbo_demo(ctx, model_path, traj_path, steps, samples, output):
    """
    Compare the sequential bound under the filtering posterior with the exact
    log evidence. Without files a random model and trajectory are drawn.
    """
    config = _config(ctx)
    model = io.read_model(model_path) if model_path else random_model(config.seed)
    if traj_path:
        traj = io.read_trajectory(traj_path)
    else:
        traj = sample_trajectory(model, steps, config.seed)
    q = lgssm_filter(model, traj)
    log_evidence = kalman_log_evidence(model, traj)
    sampled = sequential_free_energy(
        model, traj, q, config.beta, noise_seed=config.seed, n_samples=samples
    )
    analytic = sequential_free_energy(model, traj, q, config.beta, analytic=True)
    summary = {
        "log_evidence": log_evidence,
        "elbo_sampled": sampled,
        "elbo_analytic": analytic,
        "free_energy": -analytic,
        "gap": log_evidence - analytic,
        "beta": config.beta,
        "steps": len(traj),
        "first_step_kl_to_prior": kl_diag(
            q[0], DiagonalGaussian.standard(model.state_dim)
        ),
    }
    _dump(summary, output)


@cli.command()
@click.argument("bundle", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
@click.pass_context
def labels(ctx, bundle, output):
    """Regenerate the labels of a bundle from its boxes."""
    dataset = load_dataset(bundle)
    regenerated = make_labels(dataset.timeline.boxes, dataset.rig.grid)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    mismatched = 0
    for t, (fresh, stored) in enumerate(zip(regenerated, dataset.labels)):
        for name, value in fresh.items():
            if name == "instances":
                io.write_instance_map(out / f"t{t:03d}_{name}.bgrid", value)
                same = np.array_equal(value, stored[name])
            else:
                io.write_bgrid(out / f"t{t:03d}_{name}.bgrid", value)
                same = np.allclose(value, stored[name], atol=1e-6)
            if not same:
                mismatched += 1
                logger.warning("step %d: %s differs from the bundle", t, name)
    if mismatched:
        raise ValueError(f"{mismatched} label files differ from the bundle.")


@cli.command("render-pgm")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--channel", type=int, default=0, show_default=True)
@click.option("--vmin", type=float, default=0.0, show_default=True)
@click.option("--vmax", type=float, default=1.0, show_default=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
def render_pgm(input_path, channel, vmin, vmax, output):
    """Write one channel of a .bgrid file as an 8-bit PGM image."""
    grid = io.read_bgrid(input_path)
    if not 0 <= channel < grid.shape[0]:
        raise click.BadParameter(f"channel must lie in [0, {grid.shape[0]}).")
    io.write_pgm(grid.channel(channel), output, vmin, vmax)


@cli.command()
@click.argument("bundle", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(file_okay=False))
@click.pass_context
def pipeline(ctx, bundle, output):
    """Encode, align, decode, track and score a bundle."""
    summary = run_pipeline(bundle, output, _config(ctx))
    click.echo(json.dumps(summary, sort_keys=True))


def main():
    """Console entry point."""
    cli(prog_name="bevkit")


if __name__ == "__main__":
    main()
