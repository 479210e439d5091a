"""
Experiment manifests and run-directory exports.

A manifest names a config file, the seeds to run and an output directory.
``run_experiment`` walks each seed through train, optional pGAN, eval and
export, recording every produced artifact and a content hash per finished
stage. Re-running a completed manifest only re-checks those hashes.
"""

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from rich.progress import Progress, SpinnerColumn, TextColumn

from overlapgan.checkpoint import load_checkpoint, restore_bundle
from overlapgan.config import TrainConfig, config_hash, load_config
from overlapgan.data import OverlapDataset, build_dataset, class_name, sample_batch, sample_component
from overlapgan.errors import ConfigError, EvalError, IncompleteRunError, OverlapGanError
from overlapgan.evaluation import (
    Interpolation,
    classifier_posterior,
    enumerate_states,
    evaluate,
    find_state,
    frechet_distance,
    generator_sampler,
    interpolate,
    pgan_posterior_matrix,
    real_posterior_matrix,
    simplex_coordinates,
)
from overlapgan.models import ModelBundle, pgan_sample
from overlapgan.rng import RngStreams
from overlapgan.tensor import no_grad
from overlapgan.trainer import train, train_pgan
from overlapgan.utils import atomic_write_json, print_error, print_info, print_success, read_json

FINAL_CHECKPOINT = Path("checkpoints") / "checkpoint_final.json"
PGAN_CHECKPOINT = Path("checkpoints") / "checkpoint_pgan.json"
EVAL_FILE = "eval.json"
METRICS_FILE = "metrics.csv"
EXPORT_FILES = ("scatter.csv", "posterior_matrix.csv", "interpolation.csv", "loss_curve.csv")
LOSS_CURVE_COLUMNS = ["iteration", "gan_d", "gan_g", "ac_r", "cls_g", "gp", "composite_d", "composite_g", "lr"]


@dataclass
class ExperimentManifest:
    """
    One experiment on disk.

    ``config`` and ``output_dir`` are relative to the manifest file.
    ``artifacts`` maps ``seed_<n>`` to the files each stage produced.
    """

    name: str
    config: str
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    train_pgan: bool = False
    export_samples: int = 200
    artifacts: dict[str, dict[str, str]] = field(default_factory=dict)
    stage_hashes: dict[str, str] = field(default_factory=dict)
    path: Path | None = field(default=None, repr=False, compare=False)

    @property
    def root(self) -> Path:
        return self.path.parent if self.path else Path.cwd()

    @property
    def config_path(self) -> Path:
        return self.root / self.config

    @property
    def output_path(self) -> Path:
        return self.root / self.output_dir

    def run_dir(self, seed: int) -> Path:
        return self.output_path / f"seed_{seed}"

    def validate(self) -> list[str]:
        errors = []
        if not self.name:
            errors.append("manifest name must not be empty")
        if not self.seeds:
            errors.append("manifest must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            errors.append(f"manifest seeds repeat: {self.seeds}")
        if self.export_samples < 1:
            errors.append("export_samples must be >= 1")
        if Path(self.output_dir).is_absolute() or ".." in Path(self.output_dir).parts:
            errors.append("output_dir must stay inside the manifest's directory")
        return errors

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("path")
        return data

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Manifest not found: {path}")
        data = read_json(path)
        for key in ("name", "config"):
            if key not in data:
                raise ConfigError(f"Missing manifest key: {key}")
        try:
            manifest = cls(**data, path=path)
        except TypeError as e:
            raise ConfigError(f"Malformed manifest {path}: {e}") from None
        errors = manifest.validate()
        if errors:
            raise ConfigError(f"Invalid manifest {path}", errors)
        return manifest

    def save(self) -> Path:
        """Rewrite the manifest atomically."""
        with Progress(
            SpinnerColumn(),
            TextColumn("[bold green]Saving manifest..."),
            transient=True,
        ) as progress:
            progress.add_task("Saving", total=None)
            return atomic_write_json(self.path, self.to_dict())

    def record(self, seed: int, stage: str, digest: str, files: dict[str, Path]) -> None:
        key = f"seed_{seed}"
        self.stage_hashes[f"{key}/{stage}"] = digest
        entry = self.artifacts.setdefault(key, {})
        for name, file in files.items():
            entry[name] = Path(file).resolve().relative_to(self.root.resolve()).as_posix()
        self.save()

    def stage_done(self, seed: int, stage: str, digest: str) -> bool:
        """True when the stage ran with this hash and its files are still there."""
        if self.stage_hashes.get(f"seed_{seed}/{stage}") != digest:
            return False
        files = self.artifacts.get(f"seed_{seed}", {})
        prefix = f"{stage}."
        owned = [p for name, p in files.items() if name == stage or name.startswith(prefix)]
        return bool(owned) and all((self.root / p).exists() for p in owned)


# ── run directories ─────────────────────────────────────────────


def load_run(run_dir: str | Path) -> tuple[ModelBundle, OverlapDataset, TrainConfig]:
    """Bundle (with pGAN when trained), dataset and config of a finished run."""
    run_dir = Path(run_dir)
    path = run_dir / PGAN_CHECKPOINT
    if not path.exists():
        path = run_dir / FINAL_CHECKPOINT
    if not path.exists():
        raise IncompleteRunError(str(run_dir), [FINAL_CHECKPOINT.as_posix()])
    checkpoint = load_checkpoint(path)
    dataset = build_dataset(checkpoint.config.dataset)
    return restore_bundle(checkpoint, dataset.dim, dataset.c), dataset, checkpoint.config


def write_posterior_matrix_csv(matrix: np.ndarray, path: str | Path) -> Path:
    """c×c matrix with a header row of class names; first column is the conditioning class."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c = matrix.shape[0]
    names = [class_name(j) for j in range(c)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["class"] + names)
        for name, row in zip(names, matrix):
            writer.writerow([name] + [repr(float(v)) for v in row])
    return path


def write_interpolation_csv(trace: Interpolation, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c, d = trace.conditions.shape[1], trace.points.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"cond_{class_name(j)}" for j in range(c)] + [f"x{i}" for i in range(d)])
        for t, cond, point in zip(trace.t, trace.conditions, trace.points):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in cond] + [repr(float(v)) for v in point])
    return path


def default_interpolation(bundle: ModelBundle, dataset: OverlapDataset, steps: int,
                          rng: np.random.Generator) -> Interpolation:
    """Class A to class B with one fixed z."""
    if dataset.c < 2:
        raise EvalError("interpolation needs at least two classes")
    start = find_state(dataset.scheme, frozenset({0}))
    stop = find_state(dataset.scheme, frozenset({1}))
    z = rng.standard_normal(bundle.generator.z_dim)
    return interpolate(bundle.generator, start, stop, steps, z)


def export_plots(run_dir: str | Path, samples: int = 200, steps: int = 11, seed: int = 0) -> list[Path]:
    """
    Write the plot-ready files of a finished run.

    - ``scatter.csv``: per condition state, ``samples`` real points from its
      component and ``samples`` generated points from its condition vector.
    - ``posterior_matrix.csv``: the matrix stored in ``eval.json``.
    - ``interpolation.csv``: an A → B trace.
    - ``loss_curve.csv``: loss columns of ``metrics.csv``.

    Raises:
        IncompleteRunError: Listing every missing input artifact.
    """
    run_dir = Path(run_dir)
    required = [FINAL_CHECKPOINT.as_posix(), EVAL_FILE, METRICS_FILE]
    missing = [name for name in required if not (run_dir / name).exists()]
    if missing:
        raise IncompleteRunError(str(run_dir), missing)
    bundle, dataset, _ = load_run(run_dir)
    streams = RngStreams(seed)
    export_dir = run_dir / "exports"
    export_dir.mkdir(parents=True, exist_ok=True)

    sampler = generator_sampler(bundle.generator)
    scatter = export_dir / "scatter.csv"
    with open(scatter, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["source", "state"] + [f"x{i}" for i in range(dataset.dim)])
        for state in enumerate_states(dataset.scheme):
            real = sample_component(dataset, state.component, samples, streams["export.real"])
            fake = sampler(np.tile(state.array, (samples, 1)), streams["export.fake"])
            for source, points in (("real", real), ("generated", fake)):
                for point in points:
                    writer.writerow([source, state.name] + [repr(float(v)) for v in point])

    report = read_json(run_dir / EVAL_FILE)
    matrix_path = write_posterior_matrix_csv(np.array(report["posterior_matrix"]),
                                             export_dir / "posterior_matrix.csv")
    trace = default_interpolation(bundle, dataset, steps, streams["export.interp"])
    interp_path = write_interpolation_csv(trace, export_dir / "interpolation.csv")

    curve = export_dir / "loss_curve.csv"
    with open(run_dir / METRICS_FILE, newline="", encoding="utf-8") as src, \
            open(curve, "w", newline="", encoding="utf-8") as dst:
        writer = csv.DictWriter(dst, fieldnames=LOSS_CURVE_COLUMNS)
        writer.writeheader()
        for row in csv.DictReader(src):
            writer.writerow({k: row.get(k, "") for k in LOSS_CURVE_COLUMNS})

    return [scatter, matrix_path, interp_path, curve]


def evaluate_run(bundle: ModelBundle, dataset: OverlapDataset, config: TrainConfig, seed: int) -> dict:
    """Full evaluation report, plus pGAN fidelity entries when a pGAN is attached."""
    rng = RngStreams(seed)["final-eval"]
    n = config.eval_samples_per_state
    report = evaluate(bundle, dataset, n, n, rng).to_dict()
    if bundle.pgan is not None:
        classify = classifier_posterior(bundle)
        pgan_matrix = pgan_posterior_matrix(bundle.pgan, n, rng)
        real_matrix = real_posterior_matrix(classify, dataset, n, rng)
        s_r = classify(sample_batch(dataset, n, rng).x)
        with no_grad():
            s_p, _ = pgan_sample(bundle.pgan, n, rng)
        report["pgan_posterior_matrix"] = pgan_matrix.tolist()
        report["pgan_matrix_max_abs_diff"] = float(np.max(np.abs(pgan_matrix - real_matrix)))
        report["pgan_frechet_simplex"] = frechet_distance(
            simplex_coordinates(s_r), simplex_coordinates(s_p)
        ).value
    report["flags"] = list(bundle.flags)
    return report


# ── orchestration ───────────────────────────────────────────────


def _run_seed(manifest: ExperimentManifest, base: TrainConfig, seed: int, progress: bool) -> None:
    config = base.with_overrides(seed=seed)
    run_dir = manifest.run_dir(seed)
    bundle = dataset = None

    digest = config_hash(config, "train")
    if manifest.stage_done(seed, "train", digest):
        print_info(f"seed {seed}: train up to date, skipping")
    else:
        record = train(config, run_dir, progress=progress)
        bundle, dataset = record.bundle, record.dataset
        manifest.record(seed, "train", digest, {
            "train.checkpoint": run_dir / FINAL_CHECKPOINT,
            "train.metrics": run_dir / METRICS_FILE,
            "train.record": run_dir / "run_record.json",
        })

    if manifest.train_pgan and config.variant != "cGAN-concat":
        digest = config_hash(config, "pgan")
        if manifest.stage_done(seed, "pgan", digest):
            print_info(f"seed {seed}: pGAN up to date, skipping")
            bundle = None
        else:
            if bundle is None:
                bundle, dataset, _ = load_run(run_dir)
            train_pgan(config, bundle, dataset, run_dir, progress=progress)
            manifest.record(seed, "pgan", digest, {
                "pgan.checkpoint": run_dir / PGAN_CHECKPOINT,
                "pgan.record": run_dir / "pgan_record.json",
            })

    digest = config_hash(config, f"eval:pgan={manifest.train_pgan}")
    if manifest.stage_done(seed, "eval", digest):
        print_info(f"seed {seed}: eval up to date, skipping")
    else:
        if bundle is None:
            bundle, dataset, _ = load_run(run_dir)
        try:
            report = evaluate_run(bundle, dataset, config, seed)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise EvalError(f"evaluation of seed {seed} failed: {e}") from e
        manifest.record(seed, "eval", digest, {"eval": atomic_write_json(run_dir / EVAL_FILE, report)})

    digest = config_hash(config, f"export:{manifest.export_samples}")
    if manifest.stage_done(seed, "export", digest):
        print_info(f"seed {seed}: exports up to date, skipping")
    else:
        files = export_plots(run_dir, samples=manifest.export_samples, seed=seed)
        manifest.record(seed, "export", digest, {f"export.{p.stem}": p for p in files})


def run_experiment(manifest_path: str | Path, seed: int | None = None, progress: bool = False) -> int:
    """
    Run every stage of a manifest.

    ``seed`` replaces the manifest's seed list and is written back to it.

    Returns:
        Exit status: 0 on success, else the failing error's exit code.
        Artifacts of completed stages stay on disk and in the manifest.
    """
    try:
        manifest = ExperimentManifest.load(manifest_path)
        base = load_config(manifest.config_path)
        if seed is not None and manifest.seeds != [seed]:
            manifest.seeds = [seed]
            manifest.save()
        for s in manifest.seeds:
            _run_seed(manifest, base, s, progress)
    except OverlapGanError as e:
        print_error(str(e))
        return e.exit_code
    print_success(f"Experiment {manifest.name} complete ({len(manifest.seeds)} seed(s))")
    return 0
