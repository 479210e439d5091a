"""
Alternating minimax training.

Per generator iteration: ``n_d`` critic/classifier updates, each on a fresh
real batch, then one generator update. The CP-GAN generator is conditioned
on eval-mode classifier posteriors of an independent real batch, treated as
constants. pGAN is trained afterwards against a frozen classifier.
"""

import csv
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from tqdm import tqdm

from overlapgan.checkpoint import Checkpoint, restore_bundle, save_checkpoint
from overlapgan.config import TrainConfig
from overlapgan.data import OverlapDataset, build_dataset, sample_batch, sample_categorical, sample_noise
from overlapgan.errors import ConfigError, NonFiniteError, TrainingAborted
from overlapgan.evaluation import frechet_distance, quick_metrics, simplex_coordinates
from overlapgan.losses import (
    LossTerms,
    adversarial_loss,
    compose,
    generator_adversarial_loss,
    gradient_penalty,
    kl_ac_loss_gen,
    kl_ac_loss_real,
    kl_cp_loss,
    pgan_losses,
)
from overlapgan.models import ModelBundle, PGanNets, build_models, build_pgan
from overlapgan.optim import AdamState, adam_step, lr_schedule
from overlapgan.rng import RngStreams
from overlapgan.tensor import Tensor, ensure_finite, frozen, no_grad
from overlapgan.utils import atomic_write_json

LOSS_COLUMNS = ["iteration", "gan_d", "gan_g", "ac_r", "cls_g", "gp", "composite_d", "composite_g", "lr"]
EVAL_COLUMNS = ["dma", "frechet", "mean_posterior_kl"]
METRIC_COLUMNS = LOSS_COLUMNS + EVAL_COLUMNS
PGAN_EVAL_COLUMNS = ["frechet_simplex"]

ABLATION_AXES = ("dropout", "k_shared", "kl_cp_start_iter", "lambda_g", "seed")


class MetricsLog:
    """
    Append-only CSV of per-iteration loss terms (one file per run).

    Rows that carry eval columns are also kept in memory. With
    ``keep_through`` set, rows of an existing file up to that iteration are
    kept and later ones dropped, so a resumed run continues the same file.
    """

    def __init__(self, path: str | Path | None, columns: list[str], keep_through: int = 0):
        self.path = Path(path) if path else None
        self.columns = columns
        self.eval_rows: list[dict[str, Any]] = []
        self.last_row: dict[str, Any] | None = None
        self._file = None
        self._writer = None
        if self.path:
            kept = []
            if keep_through and self.path.exists():
                with open(self.path, newline="", encoding="utf-8") as f:
                    kept = [row for row in csv.DictReader(f) if int(row["iteration"]) <= keep_through]
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "w", newline="", encoding="utf-8")
            self._writer = csv.DictWriter(self._file, fieldnames=columns)
            self._writer.writeheader()
            self._writer.writerows(kept)

    def append(self, row: dict[str, Any], is_eval: bool = False) -> None:
        clean = {k: ("" if row.get(k) is None else row.get(k)) for k in self.columns}
        self.last_row = dict(row)
        if self._writer:
            self._writer.writerow(clean)
        if is_eval:
            if self.eval_rows and row["iteration"] <= self.eval_rows[-1]["iteration"]:
                raise ValueError("metric rows must be strictly increasing in iteration")
            self.eval_rows.append({k: row.get(k) for k in self.columns})

    def close(self) -> None:
        if self._file:
            self._file.close()
            self._file = None


@dataclass
class RunRecord:
    """What a training run produced."""

    config: dict
    metrics: list[dict] = field(default_factory=list)
    checkpoint: str | None = None
    wall_clock: float = 0.0
    flags: list[str] = field(default_factory=list)
    critic_steps: int = 0
    generator_steps: int = 0
    kind: str = "gan"
    bundle: ModelBundle | None = field(default=None, repr=False, compare=False)
    dataset: OverlapDataset | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "metrics": self.metrics,
            "checkpoint": self.checkpoint,
            "wall_clock": self.wall_clock,
            "flags": self.flags,
            "critic_steps": self.critic_steps,
            "generator_steps": self.generator_steps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**{k: data[k] for k in (
            "config", "metrics", "checkpoint", "wall_clock", "flags", "critic_steps", "generator_steps", "kind"
        ) if k in data})

    def save(self, path: str | Path) -> Path:
        return atomic_write_json(path, self.to_dict())

    @property
    def final_metrics(self) -> dict:
        return self.metrics[-1] if self.metrics else {}


def _check(terms: LossTerms, side: str) -> None:
    for name, value in terms.as_row().items():
        if value is not None and not np.isfinite(value):
            raise NonFiniteError(f"{side} loss term {name} is not finite")


class Trainer:
    """One GAN training run: models, optimizers, RNG streams and logs."""

    def __init__(self, config: TrainConfig, out_dir: str | Path | None = None, progress: bool = False):
        errors = config.validate()
        if errors:
            raise ConfigError("Invalid training configuration", errors)
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else None
        self.progress = progress
        self.streams = RngStreams(config.seed)
        self.dataset = build_dataset(config.dataset)
        self.bundle = build_models(config, self.dataset.dim, self.dataset.c, self.streams["init"])
        self.critic_params = self.bundle.critic.named_parameters()
        self.generator_params = self.bundle.generator.named_parameters()
        self.adam = {
            "critic": AdamState.for_params(self.critic_params, config.adam_alpha, config.adam_beta1,
                                           config.adam_beta2, config.adam_eps),
            "generator": AdamState.for_params(self.generator_params, config.adam_alpha, config.adam_beta1,
                                              config.adam_beta2, config.adam_eps),
        }
        self.critic_steps = 0
        self.generator_steps = 0
        self.start_iter = 0

    @classmethod
    def resume(cls, checkpoint: Checkpoint, out_dir: str | Path | None = None, progress: bool = False) -> "Trainer":
        """
        Continue a run from one of its periodic checkpoints.

        Weights, both Adam states and the positions of every random stream are
        restored, so finishing the run gives the same weights as never having
        stopped.

        Raises:
            ConfigError: If the checkpoint carries no generator/critic Adam state.
        """
        missing = [group for group in ("critic", "generator") if group not in checkpoint.adam_state]
        if missing:
            raise ConfigError(f"Checkpoint has no Adam state for {', '.join(missing)}; it cannot be resumed")
        trainer = cls(checkpoint.config, out_dir, progress)
        trainer.bundle = restore_bundle(checkpoint, trainer.dataset.dim, trainer.dataset.c)
        trainer.critic_params = trainer.bundle.critic.named_parameters()
        trainer.generator_params = trainer.bundle.generator.named_parameters()
        trainer.adam = {group: checkpoint.adam_state[group] for group in ("critic", "generator")}
        trainer.streams.restore(checkpoint.rng_stream_positions)
        trainer.start_iter = checkpoint.iteration
        trainer.critic_steps = checkpoint.critic_trained_iters
        trainer.generator_steps = checkpoint.iteration
        return trainer

    # ── conditioning ────────────────────────────────────────────

    def real_posteriors(self, n: int) -> np.ndarray:
        """s^r = C(y|x^r) on a fresh real batch, eval-mode, off the tape."""
        batch = sample_batch(self.dataset, n, self.streams["cond"])
        with no_grad():
            return self.bundle.critic.classify(batch.x, train=False).data

    def generator_conditions(self, n: int) -> np.ndarray:
        if self.config.variant == "CP-GAN":
            return self.real_posteriors(n)
        onehot, _ = sample_categorical(n, self.dataset.c, self.streams["labels"])
        return onehot

    # ── updates ─────────────────────────────────────────────────

    def critic_step(self, lr: float) -> LossTerms:
        """One D/C update minimizing the composite critic objective."""
        cfg, critic = self.config, self.bundle.critic
        batch = sample_batch(self.dataset, cfg.d_batch_size, self.streams["data"])
        if self.bundle.conditions_critic:
            fake_cond = batch.y
            critic_cond = batch.y
        else:
            fake_cond = self.generator_conditions(cfg.d_batch_size)
            critic_cond = None
        z = sample_noise(cfg.d_batch_size, cfg.z_dim, self.streams["noise"])
        with no_grad():
            x_fake = self.bundle.generator(z, Tensor(fake_cond)).data

        dropout_rng = self.streams["dropout"]
        scores_real, logits_real = critic.forward(batch.x, critic_cond, train=True, rng=dropout_rng)
        scores_fake = critic.discriminate(x_fake, critic_cond, train=True, rng=dropout_rng)
        gan_d, _ = adversarial_loss(scores_real, scores_fake, cfg.gan_mode)
        terms = LossTerms(gan_d=gan_d)
        if logits_real is not None:
            log_s = logits_real.log_softmax(axis=1)
            terms.ac_r = kl_ac_loss_real(log_s.exp(), batch.y, log_s)
        if cfg.gan_mode == "wgan" and cfg.lambda_gp > 0:
            terms.gp = gradient_penalty(
                lambda x_hat: critic.discriminate(x_hat, critic_cond, train=True, rng=dropout_rng),
                batch.x, x_fake, self.streams["gp"],
            )
        loss_d, _ = compose(cfg.variant, terms, cfg.lambda_r, cfg.lambda_g, cfg.lambda_gp)
        _check(terms, "critic")

        critic.zero_grad()
        loss_d.backward()
        adam_step(self.critic_params, critic.grads(), self.adam["critic"], lr)
        critic.trained_iters += 1
        self.critic_steps += 1
        return terms

    def generator_step(self, iteration: int, lr: float) -> LossTerms:
        """One G update; the classifier term joins from ``kl_cp_start_iter``."""
        cfg, critic, generator = self.config, self.bundle.critic, self.bundle.generator
        cond = self.generator_conditions(cfg.g_batch_size)
        z = sample_noise(cfg.g_batch_size, cfg.z_dim, self.streams["noise"])
        x_g = generator(z, Tensor(cond))

        critic_cond = cond if self.bundle.conditions_critic else None
        with frozen(critic.parameters()):
            scores, logits = critic.forward(x_g, critic_cond, train=True, rng=self.streams["dropout"])
            terms = LossTerms(gan_g=generator_adversarial_loss(scores, cfg.gan_mode))
            if logits is not None and iteration >= cfg.kl_cp_start_iter:
                log_s_g = logits.log_softmax(axis=1)
                s_g = log_s_g.exp()
                if cfg.variant == "CP-GAN":
                    terms.cls_g = kl_cp_loss(cond, s_g, log_s_g)
                else:
                    terms.cls_g = kl_ac_loss_gen(s_g, cond, log_s_g)
        _, loss_g = compose(cfg.variant, terms, cfg.lambda_r, cfg.lambda_g, cfg.lambda_gp)
        _check(terms, "generator")

        generator.zero_grad()
        loss_g.backward()
        adam_step(self.generator_params, generator.grads(), self.adam["generator"], lr)
        self.generator_steps += 1
        return terms

    # ── run ─────────────────────────────────────────────────────

    def _checkpoint(self, name: str, iteration: int) -> str | None:
        if not self.out_dir:
            return None
        path = self.out_dir / "checkpoints" / name
        save_checkpoint(path, self.bundle, self.config, self.adam, self.streams, iteration)
        return str(path)

    def _abort(self, error: Exception, iteration: int, log: MetricsLog) -> TrainingAborted:
        if not self.out_dir:
            return TrainingAborted(f"iteration {iteration}: {error}")
        self._checkpoint("checkpoint_abort.json", iteration)
        atomic_write_json(self.out_dir / "diagnostics.json", {
            "iteration": iteration,
            "error": str(error),
            "last_row": log.last_row,
            "critic_steps": self.critic_steps,
            "generator_steps": self.generator_steps,
        })
        return TrainingAborted(f"iteration {iteration}: {error}", str(self.out_dir))

    def run(self) -> RunRecord:
        cfg = self.config
        started = time.perf_counter()
        log = MetricsLog(self.out_dir / "metrics.csv" if self.out_dir else None, METRIC_COLUMNS,
                         keep_through=self.start_iter)
        eval_every = cfg.resolved_eval_interval
        ckpt_every = cfg.resolved_checkpoint_interval
        iterations = range(self.start_iter, cfg.total_iters)
        if self.progress:
            iterations = tqdm(iterations, desc=f"{cfg.variant} seed {cfg.seed}", unit="it",
                              initial=self.start_iter, total=cfg.total_iters)

        try:
            for it in iterations:
                lr = lr_schedule(it, cfg.adam_alpha, cfg.total_iters, cfg.lr_decay)
                try:
                    for _ in range(cfg.n_d):
                        d_terms = self.critic_step(lr)
                    g_terms = self.generator_step(it, lr)
                except NonFiniteError as e:
                    raise self._abort(e, it, log) from e

                done = it + 1
                row = {"iteration": done, "lr": lr, **d_terms.merge(g_terms).as_row()}
                is_eval = done % eval_every == 0 or done == cfg.total_iters
                if is_eval:
                    row.update(quick_metrics(self.bundle, self.dataset, cfg.eval_samples_per_state,
                                             cfg.eval_samples_per_state, self.streams["eval"]))
                log.append(row, is_eval=is_eval)
                if done % ckpt_every == 0 and done != cfg.total_iters:
                    self._checkpoint(f"ckpt_{done:07d}.json", done)
        finally:
            log.close()

        self.bundle.iteration = cfg.total_iters
        final = self._checkpoint("checkpoint_final.json", cfg.total_iters)
        record = RunRecord(
            config=cfg.to_dict(),
            metrics=log.eval_rows,
            checkpoint=final,
            wall_clock=time.perf_counter() - started,
            flags=list(self.bundle.flags),
            critic_steps=self.critic_steps,
            generator_steps=self.generator_steps,
            bundle=self.bundle,
            dataset=self.dataset,
        )
        if self.out_dir:
            record.save(self.out_dir / "run_record.json")
        return record


def train(config: TrainConfig, out_dir: str | Path | None = None, progress: bool = False) -> RunRecord:
    """Train one variant end to end. ``total_iters == 0`` returns the initialized weights."""
    return Trainer(config, out_dir, progress).run()


def resume_training(checkpoint: Checkpoint, out_dir: str | Path | None = None, progress: bool = False) -> RunRecord:
    """Finish the run a periodic checkpoint was taken from."""
    return Trainer.resume(checkpoint, out_dir, progress).run()


def train_pgan(config: TrainConfig, bundle: ModelBundle, dataset: OverlapDataset,
               out_dir: str | Path | None = None, progress: bool = False) -> RunRecord:
    """
    Train (G_p, D_p) to mimic s^r = C(y|x^r) of a frozen classifier.

    The classifier is used off the tape only. An untrained classifier is
    accepted but flagged. The trained nets are attached to ``bundle.pgan``.
    """
    if not bundle.critic.has_classifier:
        raise ConfigError(f"{bundle.variant} has no classifier to train a pGAN against")
    cfg = config
    started = time.perf_counter()
    out_dir = Path(out_dir) if out_dir else None
    streams = RngStreams(cfg.seed)
    flags = []
    if bundle.critic.trained_iters == 0:
        flags.append("untrained-classifier")
    c = dataset.c
    nets: PGanNets = build_pgan(c, cfg.width, streams["pgan.init"])
    gen_params = nets.generator.named_parameters()
    critic_params = nets.critic.named_parameters()
    adam_g = AdamState.for_params(gen_params, cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    adam_d = AdamState.for_params(critic_params, cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    total = cfg.resolved_pgan_iters
    eval_every = max(1, total // 50) if not cfg.eval_interval else cfg.eval_interval
    log = MetricsLog(out_dir / "pgan_metrics.csv" if out_dir else None, LOSS_COLUMNS + PGAN_EVAL_COLUMNS)
    critic_steps = generator_steps = 0

    def real_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
        batch = sample_batch(dataset, n, streams["pgan.data"])
        with no_grad():
            return bundle.critic.classify(batch.x, train=False).data, batch.y

    iterations = range(total)
    if progress:
        iterations = tqdm(iterations, desc=f"pGAN seed {cfg.seed}", unit="it")
    try:
        for it in iterations:
            lr = lr_schedule(it, cfg.adam_alpha, total, cfg.lr_decay)
            try:
                for _ in range(cfg.n_d):
                    s_r, y_r = real_pairs(cfg.d_batch_size)
                    z = sample_noise(cfg.d_batch_size, c, streams["pgan.noise"])
                    with no_grad():
                        s_fake = nets.generator(z, Tensor(y_r)).data
                    loss_d, _ = pgan_losses(nets.critic(s_r, y_r), nets.critic(s_fake, y_r))
                    terms_d = LossTerms(gan_d=loss_d)
                    if cfg.lambda_gp > 0:
                        terms_d.gp = gradient_penalty(lambda s_hat: nets.critic(s_hat, y_r), s_r, s_fake,
                                                      streams["pgan.gp"])
                    composite_d = loss_d if terms_d.gp is None else loss_d + terms_d.gp * cfg.lambda_gp
                    terms_d.composite_d = composite_d
                    ensure_finite("pGAN critic loss", composite_d)
                    nets.critic.zero_grad()
                    composite_d.backward()
                    adam_step(critic_params, nets.critic.grads(), adam_d, lr)
                    critic_steps += 1

                y_p, _ = sample_categorical(cfg.g_batch_size, c, streams["pgan.labels"])
                z = sample_noise(cfg.g_batch_size, c, streams["pgan.noise"])
                s_g = nets.generator(z, Tensor(y_p))
                with frozen(nets.critic.parameters()):
                    loss_g = generator_adversarial_loss(nets.critic(s_g, y_p), "wgan")
                ensure_finite("pGAN generator loss", loss_g)
                nets.generator.zero_grad()
                loss_g.backward()
                adam_step(gen_params, nets.generator.grads(), adam_g, lr)
                generator_steps += 1
            except NonFiniteError as e:
                raise TrainingAborted(f"pGAN iteration {it}: {e}") from e

            done = it + 1
            row = {"iteration": done, "lr": lr, **terms_d.as_row(), "gan_g": loss_g.item(),
                   "composite_g": loss_g.item()}
            is_eval = done % eval_every == 0 or done == total
            if is_eval:
                s_ref, _ = real_pairs(cfg.eval_samples_per_state)
                y_e, _ = sample_categorical(cfg.eval_samples_per_state, c, streams["pgan.eval"])
                z_e = sample_noise(cfg.eval_samples_per_state, c, streams["pgan.eval"])
                with no_grad():
                    s_e = nets.generator(z_e, Tensor(y_e)).data
                row["frechet_simplex"] = frechet_distance(simplex_coordinates(s_ref), simplex_coordinates(s_e)).value
            log.append(row, is_eval=is_eval)
    finally:
        log.close()

    bundle.pgan = nets
    bundle.flags = sorted(set(bundle.flags) | set(flags))
    checkpoint = None
    if out_dir:
        checkpoint = str(save_checkpoint(out_dir / "checkpoints" / "checkpoint_pgan.json", bundle, cfg,
                                         {"pgan.generator": adam_g, "pgan.critic": adam_d}, streams,
                                         bundle.iteration))
    record = RunRecord(
        config=cfg.to_dict(),
        metrics=log.eval_rows,
        checkpoint=checkpoint,
        wall_clock=time.perf_counter() - started,
        flags=flags,
        critic_steps=critic_steps,
        generator_steps=generator_steps,
        kind="pgan",
        bundle=bundle,
        dataset=dataset,
    )
    if out_dir:
        record.save(out_dir / "pgan_record.json")
    return record


# ── ablation grid ───────────────────────────────────────────────


def axis_values(axis: str, base: TrainConfig) -> list:
    """Grid values per axis; the onset axis scales 0/20k/40k of 100k to the run length."""
    if axis == "dropout":
        return [True, False]
    if axis == "k_shared":
        return [0, 1, 2, 3]
    if axis == "kl_cp_start_iter":
        return [0, base.total_iters // 5, 2 * base.total_iters // 5]
    if axis == "lambda_g":
        return [0.1, 0.2, 0.4, 1.0]
    if axis == "seed":
        return [base.seed, base.seed + 1, base.seed + 2]
    raise ConfigError(f"Unknown ablation axis {axis!r}; expected one of {', '.join(ABLATION_AXES)}")


def grid_cells(base: TrainConfig, axes: list[str]) -> list[tuple[str, TrainConfig]]:
    """(cell name, config) for the Cartesian product of ``axes``."""
    if len(set(axes)) != len(axes):
        raise ConfigError(f"Ablation axes repeat: {axes}")
    values = [axis_values(axis, base) for axis in axes]
    cells = []
    for combo in itertools.product(*values):
        changes = dict(zip(axes, combo))
        name = "_".join(f"{k}={v}" for k, v in changes.items()) or "base"
        cells.append((name, base.with_overrides(**changes)))
    return cells


def _run_cell(config_dict: dict, out_dir: str | None) -> dict:
    record = train(TrainConfig.from_dict(config_dict), out_dir)
    return record.to_dict()


@dataclass
class AblationResult:
    cells: list[str]
    records: list[RunRecord]

    def table(self) -> list[dict]:
        """One comparison row per cell with its final eval metrics."""
        rows = []
        for name, record in zip(self.cells, self.records):
            final = record.final_metrics
            rows.append({
                "cell": name,
                "dma": final.get("dma"),
                "frechet": final.get("frechet"),
                "mean_posterior_kl": final.get("mean_posterior_kl"),
            })
        return rows


def ablation_grid(base: TrainConfig, axes: list[str], out_dir: str | Path | None = None,
                  workers: int = 1) -> AblationResult:
    """
    Run every cell of the grid over ``axes``.

    Cells share the base seed (identical initializations) unless ``seed`` is
    itself an axis. With ``workers > 1`` cells run in separate processes.
    """
    cells = grid_cells(base, axes)
    out_dir = Path(out_dir) if out_dir else None
    cell_dirs = [str(out_dir / name) if out_dir else None for name, _ in cells]

    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, cfg.to_dict(), d) for (_, cfg), d in zip(cells, cell_dirs)]
            records = [RunRecord.from_dict(f.result()) for f in futures]
    else:
        records = [train(cfg, d) for (_, cfg), d in zip(cells, cell_dirs)]

    result = AblationResult([name for name, _ in cells], records)
    if out_dir:
        atomic_write_json(out_dir / "ablation_table.json", result.table())
    return result
