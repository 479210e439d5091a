"""
Command-line entry point for OverlapGAN.

Every subcommand reads a JSON config or a checkpoint, writes its results
under ``--out`` and exits with 0 on success, 1 on configuration errors,
2 on runtime aborts and 3 on evaluation failures.
"""

import functools
import sys
from pathlib import Path

import click
import numpy as np

from overlapgan import __app_name__, __version__
from overlapgan.checkpoint import load_checkpoint, restore_bundle
from overlapgan.config import DatasetSpec, load_config, load_settings
from overlapgan.data import build_dataset, parse_class_label, sample_batch, write_dataset_csv
from overlapgan.errors import ConfigError, EvalError, OverlapGanError
from overlapgan.evaluation import (
    classifier_posterior,
    evaluate,
    find_state,
    interpolate,
    oracle_posterior,
    pgan_posterior_matrix,
    real_posterior_matrix,
)
from overlapgan.manifest import export_plots, run_experiment, write_interpolation_csv, write_posterior_matrix_csv
from overlapgan.rng import RngStreams
from overlapgan.trainer import METRIC_COLUMNS, ablation_grid, resume_training, train, train_pgan
from overlapgan.utils import (
    atomic_write_json,
    console,
    format_float,
    format_table_data,
    print_error,
    print_info,
    print_section_header,
    print_success,
    read_json,
)


def exits_on_error(func=None, *, numeric_exit: int = OverlapGanError.exit_code):
    """
    Turn library errors into a printed message and the matching exit code.

    Numeric failures raised from numpy or scipy (a singular matrix, a NaN
    reaching a decomposition) exit with ``numeric_exit``: 2 by default and 3
    on the evaluation commands.
    """
    if func is None:
        return functools.partial(exits_on_error, numeric_exit=numeric_exit)

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except OverlapGanError as e:
            print_error(str(e))
            sys.exit(e.exit_code)
        except (np.linalg.LinAlgError, ArithmeticError, ValueError) as e:
            print_error(f"{type(e).__name__}: {e}")
            sys.exit(numeric_exit)
        except KeyboardInterrupt:
            console.print("\n[info]Interrupted.[/info]")
            sys.exit(130)

    return wrapper


def _out_dir(out: str | None, default_name: str) -> Path:
    if out:
        return Path(out)
    return Path(load_settings().output_dir) / default_name


def _show_metrics(rows: list[dict], title: str) -> None:
    columns = ["iteration"] + [c for c in METRIC_COLUMNS[-3:]]
    format_table_data(
        columns,
        [[str(row["iteration"])] + [format_float(row.get(c)) for c in columns[1:]] for row in rows[-5:]],
        title=title,
    )


def _load_bundle(checkpoint_path: str):
    checkpoint = load_checkpoint(checkpoint_path)
    dataset = build_dataset(checkpoint.config.dataset)
    return restore_bundle(checkpoint, dataset.dim, dataset.c), dataset, checkpoint.config


@click.group()
@click.version_option(version=__version__, prog_name=__app_name__)
def cli() -> None:
    """OverlapGAN: conditional GANs on class-overlapping Gaussian mixtures."""


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON training config")
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--out", default=None, help="Run directory (default: $OVERLAP_GAN_OUTPUT_DIR/<variant>_seed<n>)")
@exits_on_error
def train_command(config_path: str, seed: int | None, out: str | None) -> None:
    """Train one GAN variant."""
    settings = load_settings()
    config = load_config(config_path, seed=seed)
    out_dir = _out_dir(out, f"{config.variant}_seed{config.seed}")
    print_section_header(f"Training {config.variant} for {config.total_iters} iterations")
    record = train(config, out_dir, progress=settings.progress)
    if record.metrics:
        _show_metrics(record.metrics, "Evaluation checkpoints")
    for flag in record.flags:
        print_info(f"flag: {flag}")
    print_success(f"Run saved to {out_dir} ({record.wall_clock:.1f}s)")


@cli.command("resume")
@click.option("--checkpoint", required=True, type=click.Path(), help="Periodic checkpoint of an unfinished run")
@click.option("--out", default=None, help="Run directory (default: the checkpoint's own run)")
@exits_on_error
def resume_command(checkpoint: str, out: str | None) -> None:
    """Finish a training run from a periodic checkpoint."""
    settings = load_settings()
    saved = load_checkpoint(checkpoint)
    out_dir = Path(out) if out else Path(checkpoint).resolve().parent.parent
    print_section_header(f"Resuming {saved.variant} at iteration {saved.iteration} of {saved.config.total_iters}")
    record = resume_training(saved, out_dir, progress=settings.progress)
    if record.metrics:
        _show_metrics(record.metrics, "Evaluation checkpoints")
    print_success(f"Run saved to {out_dir} ({record.wall_clock:.1f}s)")


@cli.command("train-pgan")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained AC-GAN / CP-GAN checkpoint")
@click.option("--iters", type=int, default=None, help="pGAN iterations (default: config value)")
@click.option("--out", required=True, help="Output run directory")
@exits_on_error
def train_pgan_command(checkpoint: str, iters: int | None, out: str) -> None:
    """Train a posterior GAN against a frozen classifier."""
    settings = load_settings()
    bundle, dataset, config = _load_bundle(checkpoint)
    if iters is not None:
        config = config.with_overrides(pgan_total_iters=iters)
    record = train_pgan(config, bundle, dataset, out, progress=settings.progress)
    for flag in record.flags:
        print_info(f"flag: {flag}")
    print_success(f"pGAN saved to {record.checkpoint or out}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(), help="Checkpoint to evaluate")
@click.option("--dataset", "dataset_path", default=None, type=click.Path(),
              help="JSON dataset spec (default: the checkpoint's own)")
@click.option("--samples", type=int, default=None, help="Samples per condition state")
@click.option("--seed", type=int, default=0, help="Evaluation seed")
@click.option("--out", required=True, help="Path of the eval JSON")
@exits_on_error(numeric_exit=EvalError.exit_code)
def eval_command(checkpoint: str, dataset_path: str | None, samples: int | None, seed: int, out: str) -> None:
    """DMA, Fréchet distance, posterior matrix and entropy profile of a checkpoint."""
    bundle, dataset, config = _load_bundle(checkpoint)
    if dataset_path:
        if not Path(dataset_path).exists():
            raise ConfigError(f"Dataset spec not found: {dataset_path}")
        dataset = build_dataset(DatasetSpec.from_dict(read_json(dataset_path)))
    n = samples or config.eval_samples_per_state
    report = evaluate(bundle, dataset, n, n, RngStreams(seed)["final-eval"])
    atomic_write_json(out, report.to_dict())
    format_table_data(
        ["state", "accuracy"],
        [[name, format_float(acc)] for name, acc in report.dma_per_state.items()],
        title=f"DMA (mean {format_float(report.dma_mean)})",
    )
    print_info(f"Fréchet distance: {format_float(report.frechet_global)}")
    print_success(f"Report written to {out}")


@cli.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Base JSON config")
@click.option("--axis", "axes", multiple=True,
              help="Axis to sweep: dropout, k_shared, kl_cp_start_iter, lambda_g, seed")
@click.option("--workers", type=int, default=None, help="Parallel cells (capped by OVERLAP_GAN_THREADS)")
@click.option("--out", default=None, help="Grid directory")
@exits_on_error
def ablate_command(config_path: str, axes: tuple[str, ...], workers: int | None, out: str | None) -> None:
    """Run an ablation grid; one isolated run per cell."""
    settings = load_settings()
    config = load_config(config_path)
    workers = min(workers or settings.threads, settings.threads)
    out_dir = _out_dir(out, "ablation")
    result = ablation_grid(config, list(axes), out_dir, workers=workers)
    format_table_data(
        ["cell", "dma", "frechet", "mean_posterior_kl"],
        [[row["cell"], format_float(row["dma"]), format_float(row["frechet"]),
          format_float(row["mean_posterior_kl"])] for row in result.table()],
        title="Ablation grid",
    )
    print_success(f"Grid saved to {out_dir}")


@cli.command("interpolate")
@click.option("--checkpoint", required=True, type=click.Path(), help="Trained checkpoint")
@click.option("--from", "start", required=True, help="Start state, e.g. A or A+B")
@click.option("--to", "stop", required=True, help="End state, e.g. B")
@click.option("--steps", type=int, default=11, show_default=True)
@click.option("--seed", type=int, default=0, help="Seed of the fixed z")
@click.option("--out", required=True, help="Trace CSV")
@exits_on_error(numeric_exit=EvalError.exit_code)
def interpolate_command(checkpoint: str, start: str, stop: str, steps: int, seed: int, out: str) -> None:
    """Generate along a straight line between two condition states with z fixed."""
    bundle, dataset, _ = _load_bundle(checkpoint)
    state_from = find_state(dataset.scheme, parse_class_label(start, dataset.c))
    state_to = find_state(dataset.scheme, parse_class_label(stop, dataset.c))
    z = RngStreams(seed)["interpolate"].standard_normal(bundle.generator.z_dim)
    trace = interpolate(bundle.generator, state_from, state_to, steps, z)
    write_interpolation_csv(trace, out)
    print_success(f"{steps}-step trace {state_from.name} → {state_to.name} written to {out}")


@cli.command("posterior-matrix")
@click.option("--checkpoint", required=True, type=click.Path(), help="Checkpoint (with pGAN for --source pgan)")
@click.option("--source", type=click.Choice(["real", "pgan", "bayes"]), default="real", show_default=True)
@click.option("--samples", type=int, default=10_000, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, help="Matrix CSV")
@exits_on_error(numeric_exit=EvalError.exit_code)
def posterior_matrix_command(checkpoint: str, source: str, samples: int, seed: int, out: str) -> None:
    """Mean posterior per conditioning class, from real data or from pGAN samples."""
    bundle, dataset, _ = _load_bundle(checkpoint)
    rng = RngStreams(seed)["posterior-matrix"]
    if source == "pgan":
        if bundle.pgan is None:
            raise ConfigError(f"Checkpoint {checkpoint} holds no pGAN; run train-pgan first")
        matrix = pgan_posterior_matrix(bundle.pgan, samples, rng)
    elif source == "bayes":
        matrix = real_posterior_matrix(oracle_posterior(dataset), dataset, samples, rng)
    else:
        if not bundle.critic.has_classifier:
            raise ConfigError(f"{bundle.variant} has no classifier; use --source bayes")
        matrix = real_posterior_matrix(classifier_posterior(bundle), dataset, samples, rng)
    write_posterior_matrix_csv(matrix, out)
    print_success(f"{source} posterior matrix written to {out}")


@cli.command("export-dataset")
@click.option("--config", "config_path", required=True, type=click.Path(), help="JSON config naming the dataset")
@click.option("--n", "n", type=int, default=1000, show_default=True, help="Points to sample")
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, help="CSV path")
@click.option("--spec-out", default=None, help="Also write the explicit dataset spec JSON here")
@exits_on_error
def export_dataset_command(config_path: str, n: int, seed: int | None, out: str, spec_out: str | None) -> None:
    """Sample labeled points from the configured mixture."""
    config = load_config(config_path, seed=seed)
    dataset = build_dataset(config.dataset)
    batch = sample_batch(dataset, n, RngStreams(config.seed)["export"])
    write_dataset_csv(batch, out)
    if spec_out:
        atomic_write_json(spec_out, dataset.to_spec())
    print_success(f"{n} points of {dataset.name} written to {out}")


@cli.command("export-plots")
@click.argument("run_dir", type=click.Path())
@click.option("--samples", type=int, default=200, show_default=True, help="Points per source per state")
@click.option("--seed", type=int, default=0)
@exits_on_error(numeric_exit=EvalError.exit_code)
def export_plots_command(run_dir: str, samples: int, seed: int) -> None:
    """Write scatter, posterior-matrix, interpolation and loss-curve CSVs of a run."""
    files = export_plots(run_dir, samples=samples, seed=seed)
    for path in files:
        print_info(str(path))
    print_success(f"{len(files)} export files written")


@cli.command("run")
@click.argument("manifest", type=click.Path())
@click.option("--seed", type=int, default=None, help="Run only this seed (recorded in the manifest)")
@exits_on_error
def run_command(manifest: str, seed: int | None) -> None:
    """Run a manifest end to end: train, pGAN, eval, export."""
    sys.exit(run_experiment(manifest, seed=seed, progress=load_settings().progress))


if __name__ == "__main__":
    cli()
