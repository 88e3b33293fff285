"""Alternating adversarial training loop with checkpointing and loss curves.

Each batch takes two phases: first one Adam step on both discriminators
jointly (autoencoder outputs detached), then one Adam step on the
autoencoder with the discriminators frozen. All randomness is derived from
the config seed plus structural indices (epoch, step), so a run is bitwise
reproducible and resumable.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .model import (
    LATENT_DIM,
    CdaaeModel,
    LossBundle,
    SkipPosition,
    ae_phase_losses,
    disc_phase_losses,
)
from .optim import Adam
from .tensor import Graph, NumericError, Tensor, frozen

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "l_r", "l_e_d", "l_e_g", "l_g_d", "l_g_g", "total_ae")


@dataclass
class TrainConfig:
    skip_position: str = "p2"
    label_mode: str = "au"
    lr_ae: float = 1e-3
    lr_disc: float = 1e-4
    batch_size: int = 32
    alpha: float = 1.0
    beta1: float = 1e-2  # weight of the latent adversarial term, not an Adam constant
    beta2: float = 1e-3  # weight of the image adversarial term
    epochs: int = 40
    seed: int = 0
    manifest_path: str = ""
    output_dir: str = ""
    max_steps: int | None = None

    def validate(self) -> None:
        if self.lr_ae <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.alpha, self.beta1, self.beta2) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        SkipPosition(self.skip_position)
        if self.label_mode not in data.LABEL_DIMS:
            raise ValueError(f"unknown label_mode {self.label_mode!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = TrainConfig(**raw)
        cfg.validate()
        return cfg

    @staticmethod
    def from_json(path: str | Path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return TrainConfig.from_dict(json.load(fh))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from the run seed and structural indices."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


@dataclass
class TrainResult:
    checkpoint_path: Path
    losses_path: Path
    history: list[dict[str, float]]
    final_step: int


class _BatchCache:
    """Preprocessed image cache keyed by path; corpora are desk-scale."""

    def __init__(self) -> None:
        self._cache: dict[Path, np.ndarray] = {}

    def image(self, row: data.ManifestRow) -> np.ndarray:
        cached = self._cache.get(row.image_path)
        if cached is None:
            cached = data.load_preprocessed(row)
            self._cache[row.image_path] = cached
        return cached

    def batch(self, pairs: list[data.FacePair], dtype) -> tuple[Tensor, Tensor, Tensor]:
        x_s = np.stack([self.image(p.source) for p in pairs]).astype(dtype, copy=False)
        x_t = np.stack([self.image(p.target) for p in pairs]).astype(dtype, copy=False)
        labels = np.stack([p.label for p in pairs]).astype(dtype, copy=False)
        return Tensor(x_s), Tensor(x_t), Tensor(labels)


def train_step(
    model: CdaaeModel,
    x_s: Tensor,
    x_t: Tensor,
    labels: Tensor,
    ae_opt: Adam,
    disc_opt: Adam,
    z_rng: np.random.Generator,
    alpha: float,
    beta1: float,
    beta2: float,
) -> LossBundle:
    """One discriminator step followed by one autoencoder step on the same batch.

    Returns the loss bundle of the autoencoder phase (i.e. computed after the
    discriminator update).
    """
    l_e_d, l_g_d = disc_update(model, x_s, labels, disc_opt, z_rng)
    l_r, l_e_g, l_g_g, total = ae_update(model, x_s, x_t, labels, ae_opt, alpha, beta1, beta2)
    return LossBundle(l_r=l_r, l_e_d=l_e_d, l_e_g=l_e_g, l_g_d=l_g_d, l_g_g=l_g_g, total_ae=total)


def disc_update(
    model: CdaaeModel, x_s: Tensor, labels: Tensor, disc_opt: Adam, z_rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    """Phase 1: one joint Adam step on both discriminators, autoencoder frozen."""
    n = x_s.shape[0]
    z_prior = Tensor(z_rng.standard_normal((n, LATENT_DIM)).astype(model.dtype))
    disc_opt.zero_grad()
    with frozen(p for _, p in model.ae_parameters()):
        with Graph() as graph:
            l_e_d, l_g_d = disc_phase_losses(model, x_s, labels, z_prior)
            graph.backward(l_e_d + l_g_d)
        disc_opt.step()
    disc_opt.zero_grad()
    return l_e_d, l_g_d


def ae_update(
    model: CdaaeModel,
    x_s: Tensor,
    x_t: Tensor,
    labels: Tensor,
    ae_opt: Adam,
    alpha: float,
    beta1: float,
    beta2: float,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Phase 2: recompute the forward pass and step the autoencoder,
    discriminators frozen."""
    ae_opt.zero_grad()
    with frozen(p for _, p in model.disc_parameters()):
        with Graph() as graph:
            l_r, l_e_g, l_g_g, total = ae_phase_losses(model, x_s, x_t, labels, alpha, beta1, beta2)
            graph.backward(total)
        ae_opt.step()
    ae_opt.zero_grad()
    return l_r, l_e_g, l_g_g, total


def _checkpoint_tensors(model: CdaaeModel, ae_opt: Adam, disc_opt: Adam, step: int,
                        loss_means: dict[str, float]) -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = [(name, p.data) for name, p in model.parameters()]
    tensors += [(f"adam.ae.{name}", arr) for name, arr in ae_opt.state_tensors()]
    tensors += [(f"adam.disc.{name}", arr) for name, arr in disc_opt.state_tensors()]
    tensors.append(("meta.step", np.asarray([float(step)], dtype=np.float32)))
    means = np.asarray([loss_means[k] for k in LOSS_COLUMNS[1:]], dtype=np.float32)
    tensors.append(("meta.loss_means", means))
    return tensors


def build_model(config: TrainConfig, dtype=np.float32) -> CdaaeModel:
    return CdaaeModel(
        skip=SkipPosition(config.skip_position),
        label_mode=config.label_mode,
        seed=config.seed,
        dtype=dtype,
    )


def model_from_checkpoint(path: str | Path) -> tuple[CdaaeModel, CheckpointData]:
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    model = build_model(config)
    model.load_state(ckpt.tensors)
    return model, ckpt


def _make_optimizers(model: CdaaeModel, config: TrainConfig) -> tuple[Adam, Adam]:
    return (
        Adam(model.ae_parameters(), lr=config.lr_ae),
        Adam(model.disc_parameters(), lr=config.lr_disc),
    )


def load_pairs(config: TrainConfig, manifest: data.CorpusManifest | None = None) -> list[data.FacePair]:
    if manifest is None:
        manifest = data.load_manifest(config.manifest_path)
    if manifest.label_mode != config.label_mode:
        raise data.ManifestError(
            f"config expects {config.label_mode} labels but manifest is {manifest.label_mode}"
        )
    if config.label_mode == "au":
        return data.sample_pairs_au(manifest, seed=config.seed)
    return data.sample_pairs_emotion(manifest, seed=config.seed)


def train(config: TrainConfig, start_checkpoint: CheckpointData | None = None) -> TrainResult:
    """Run the full loop; deterministic for a fixed config (seed included)."""
    config.validate()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = load_pairs(config)
    steps_per_epoch = len(pairs) // config.batch_size
    if steps_per_epoch < 1:
        raise ValueError(
            f"corpus yields {len(pairs)} pairs, fewer than one batch of {config.batch_size}"
        )

    model = build_model(config)
    ae_opt, disc_opt = _make_optimizers(model, config)
    step = 0
    if start_checkpoint is not None:
        model.load_state(start_checkpoint.tensors)
        ae_opt.load_state_tensors(
            {k[len("adam.ae."):]: v for k, v in start_checkpoint.tensors.items() if k.startswith("adam.ae.")}
        )
        disc_opt.load_state_tensors(
            {k[len("adam.disc."):]: v for k, v in start_checkpoint.tensors.items() if k.startswith("adam.disc.")}
        )
        step = start_checkpoint.step

    cache = _BatchCache()
    history: list[dict[str, float]] = []
    running: dict[str, float] = {k: 0.0 for k in LOSS_COLUMNS[1:]}
    losses_path = out_dir / "losses.csv"
    write_header = not (start_checkpoint is not None and losses_path.exists())
    losses_file = open(losses_path, "a" if not write_header else "w", newline="", encoding="utf-8")
    writer = csv.writer(losses_file)
    if write_header:
        writer.writerow(LOSS_COLUMNS)

    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    last_path = out_dir / "checkpoint_last.bin"
    final_path = out_dir / "checkpoint_final.bin"

    def running_means() -> dict[str, float]:
        divisor = max(step, 1)
        return {k: v / divisor for k, v in running.items()}

    try:
        start_epoch = step // steps_per_epoch
        for epoch in range(start_epoch, config.epochs):
            if step >= total_steps:
                break
            order = rng_for(config.seed, 1, epoch).permutation(len(pairs))
            first_batch = step - epoch * steps_per_epoch  # nonzero only when resuming mid-epoch
            for b in range(first_batch, steps_per_epoch):
                if step >= total_steps:
                    break
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                batch = [pairs[i] for i in idx]
                x_s, x_t, labels = cache.batch(batch, model.dtype)
                try:
                    bundle = train_step(
                        model, x_s, x_t, labels, ae_opt, disc_opt,
                        rng_for(config.seed, 2, step),
                        config.alpha, config.beta1, config.beta2,
                    )
                except NumericError as exc:
                    recent = history[-1] if history else None
                    raise NumericError(
                        f"aborted at step {step + 1}: {exc}; last recorded losses: {recent}"
                    ) from exc
                step += 1
                scalars = bundle.scalars()
                for k in running:
                    running[k] += scalars[k]
                history.append({"step": step, **scalars})
                writer.writerow([step] + [f"{scalars[k]:.8g}" for k in LOSS_COLUMNS[1:]])
            save_checkpoint(
                last_path, config.to_dict(),
                _checkpoint_tensors(model, ae_opt, disc_opt, step, running_means()),
            )
            logger.info("epoch %d done at step %d: l_r=%.5f", epoch, step, running_means()["l_r"])
    finally:
        losses_file.close()

    save_checkpoint(
        final_path, config.to_dict(),
        _checkpoint_tensors(model, ae_opt, disc_opt, step, running_means()),
    )
    return TrainResult(checkpoint_path=final_path, losses_path=losses_path, history=history, final_step=step)


_KEEP = object()


def resume(checkpoint_path: str | Path, epochs=_KEEP, max_steps=_KEEP) -> TrainResult:
    """Continue a run from its checkpoint, using the embedded config.

    ``epochs``/``max_steps`` optionally extend the original schedule, e.g. to
    carry a finished run further.
    """
    ckpt = load_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(ckpt.config)
    if epochs is not _KEEP:
        config = dataclasses.replace(config, epochs=epochs)
    if max_steps is not _KEEP:
        config = dataclasses.replace(config, max_steps=max_steps)
    config.validate()
    return train(config, start_checkpoint=ckpt)


def moving_average(values, window: int):
    """Trailing moving average; the first window-1 entries average what exists."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    cumsum = np.cumsum(values)
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        total = cumsum[i] - (cumsum[lo - 1] if lo > 0 else 0.0)
        out[i] = total / (i - lo + 1)
    return out


def run_ablation(
    config: TrainConfig,
    positions: tuple[str, ...] = ("none", "p1", "p2", "p3"),
    eval_manifest_path: str | Path | None = None,
    ground_truth_path: str | Path | None = None,
) -> dict:
    """Train one model per skip position with identical data order and seeds.

    Produces per-position checkpoints under the config output dir and a
    comparison report. When a held-out corpus with ground truth is supplied,
    the report carries the identity/label-control metrics per position plus
    directional sanity checks on the identity ranking.
    """
    from . import evaluate  # local import: evaluate depends on training

    out_root = Path(config.output_dir)
    report: dict = {"positions": {}, "directional_checks": {}}
    scores: dict[str, float] = {}
    for position in positions:
        sub = dataclasses.replace(
            config, skip_position=position, output_dir=str(out_root / f"ablation_{position}")
        )
        result = train(sub)
        entry: dict = {
            "checkpoint": str(result.checkpoint_path),
            "final_l_r": result.history[-1]["l_r"] if result.history else None,
        }
        if eval_manifest_path is not None and ground_truth_path is not None:
            model, _ = model_from_checkpoint(result.checkpoint_path)
            ev = evaluate.evaluate_model(model, eval_manifest_path, ground_truth_path)
            entry["identity_score"] = ev.identity_score
            entry["label_monotonicity"] = ev.label_monotonicity
            entry["reconstruction_mse"] = ev.reconstruction_mse
            scores[position] = ev.identity_score
        report["positions"][position] = entry

    if scores:
        if "p2" in scores and "none" in scores:
            report["directional_checks"]["p2_identity_ge_none"] = bool(scores["p2"] >= scores["none"])
        if "p1" in scores:
            report["directional_checks"]["p1_identity_highest"] = bool(
                scores["p1"] >= max(scores.values())
            )
        for name, ok in report["directional_checks"].items():
            if not ok:
                logger.warning("directional check failed: %s (scores: %s)", name, scores)

    report_path = out_root / "ablation_report.json"
    out_root.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    report["report_path"] = str(report_path)
    return report
