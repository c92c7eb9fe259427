"""Alternating discriminator/generator optimization with a fake-history buffer."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import engine as E
from .connectome import DatasetManifest, ValidationError
from .losses import (LossReport, LossWeights, cycle_loss, gan_loss_discriminator, gan_loss_generator,
                     identity_loss, sp_loss, total_objective)
from .model import DEFAULT_DISC_WIDTHS, DEFAULT_WIDTHS, ModelCheckpoint, init_models, save_checkpoint

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch",) + LossReport.FIELDS


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    replay_buffer_size: int = 50
    checkpoint_every: int = 0
    widths: tuple[int, int] = DEFAULT_WIDTHS
    disc_widths: tuple[int, int] = DEFAULT_DISC_WIDTHS
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if self.weight_decay < 0 or self.replay_buffer_size < 0 or self.checkpoint_every < 0:
            raise ValidationError("weight_decay, replay_buffer_size and checkpoint_every must be >= 0")
        self.widths = tuple(self.widths)
        self.disc_widths = tuple(self.disc_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["disc_widths"] = list(self.disc_widths)
        return d


class ReplayBuffer:
    """History of generated matrices shown to a discriminator.

    Until full, every fake is stored and passed through. Afterwards each fake
    is, with probability 1/2, swapped for a uniformly chosen stored one.
    """

    def __init__(self, capacity: int, items: np.ndarray | None = None):
        self.capacity = capacity
        self.items: list[np.ndarray] = [] if items is None else [a.copy() for a in items]

    def __len__(self) -> int:
        return len(self.items)

    def query(self, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.capacity == 0:
            return batch
        out = np.empty_like(batch)
        for i, fake in enumerate(batch):
            if len(self.items) < self.capacity:
                self.items.append(fake.copy())
                out[i] = fake
            elif rng.random() < 0.5:
                j = int(rng.integers(len(self.items)))
                out[i] = self.items[j]
                self.items[j] = fake.copy()
            else:
                out[i] = fake
        return out

    def to_array(self, n: int, dtype=np.float32) -> np.ndarray:
        if not self.items:
            return np.zeros((0, n, n), dtype=dtype)
        return np.stack(self.items).astype(dtype)


def _finite(name: str, value: float, epoch: int, step: int) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {name} loss ({value}) at epoch {epoch + 1}, step {step}")
    return value


def _stack(conns) -> np.ndarray:
    return np.stack([c.values for c in conns]).astype(np.float32)


def train(manifest: DatasetManifest, cfg: TrainConfig, log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None,
          on_epoch: Callable[[int, dict], None] | None = None) -> tuple[ModelCheckpoint, list[dict]]:
    """Train from a fresh seeded initialization."""
    models = init_models(manifest.n, cfg.widths, cfg.seed, cfg.disc_widths)
    ck = ModelCheckpoint.fresh(models, cfg.to_dict())
    return _run(ck, manifest, cfg, log_path, checkpoint_dir, on_epoch)


def resume(ck: ModelCheckpoint, manifest: DatasetManifest, cfg: TrainConfig,
           log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None,
           on_epoch: Callable[[int, dict], None] | None = None) -> tuple[ModelCheckpoint, list[dict]]:
    """Continue ``ck`` up to ``cfg.epochs`` total epochs."""
    if ck.n != manifest.n:
        raise ValidationError(f"checkpoint is for n={ck.n}, dataset has n={manifest.n}")
    if ck.models.g_fc.widths != cfg.widths or ck.models.d_fc.widths != cfg.disc_widths:
        raise ValidationError("checkpoint channel widths differ from the run configuration")
    if ck.epoch >= cfg.epochs:
        return ck, ck.history
    ck.config = cfg.to_dict()
    return _run(ck, manifest, cfg, log_path, checkpoint_dir, on_epoch)


def _run(ck: ModelCheckpoint, manifest: DatasetManifest, cfg: TrainConfig, log_path, checkpoint_dir, on_epoch):
    fcs, scs = manifest.load_split("train")
    if not fcs:
        raise ValidationError("train split is empty")
    x_fc_all, x_sc_all = _stack(fcs), _stack(scs)
    m = ck.models
    g_params, d_params = m.generator_params(), m.discriminator_params()
    w = cfg.weights
    n = manifest.n
    buf_fc = ReplayBuffer(cfg.replay_buffer_size, ck.buffers.get("FC"))
    buf_sc = ReplayBuffer(cfg.replay_buffer_size, ck.buffers.get("SC"))
    if log_path is not None and ck.epoch == 0:
        Path(log_path).write_text(",".join(LOG_COLUMNS) + "\n")

    while ck.epoch < cfg.epochs:
        epoch = ck.epoch
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(fcs))
        buf_rng = np.random.default_rng([cfg.seed, epoch, 1])
        sums = dict.fromkeys(LossReport.FIELDS, 0.0)
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x_fc, x_sc = E.Tensor(x_fc_all[idx]), E.Tensor(x_sc_all[idx])

            # generator graph is built first; the discriminator step below
            # leaves generator weights untouched, so these fakes stay valid
            fake_fc = m.g_fc(x_sc)
            fake_sc = m.g_sc(x_fc)

            # discriminator step on real vs buffered fakes
            pool_fc = buf_fc.query(fake_fc.data, buf_rng)
            pool_sc = buf_sc.query(fake_sc.data, buf_rng)
            d_fc_loss = gan_loss_discriminator(m.d_fc(x_fc), m.d_fc(E.Tensor(pool_fc)))
            d_sc_loss = gan_loss_discriminator(m.d_sc(x_sc), m.d_sc(E.Tensor(pool_sc)))
            d_total = w.adv * (d_fc_loss + d_sc_loss)
            _finite("gan_d", float(d_total.data), epoch, steps)
            E.backward(d_total, d_params)
            E.adam_step(d_params, ck.adam_d, cfg.lr, cfg.weight_decay)

            # generator step
            comps = {
                "gan_g_fc": gan_loss_generator(m.d_fc(fake_fc)),
                "gan_g_sc": gan_loss_generator(m.d_sc(fake_sc)),
                "gan_d_fc": d_fc_loss,
                "gan_d_sc": d_sc_loss,
                "cyc": cycle_loss(m.g_fc, m.g_sc, x_fc, x_sc, fake_fc, fake_sc),
                "id": identity_loss(m.g_fc, m.g_sc, x_fc, x_sc),
            }
            if w.sp_enabled:
                comps["sp_mse"], comps["sp_pcc"] = sp_loss(x_fc, x_sc, fake_fc, fake_sc, w.sp_pairing, w.pcc_rows)
            g_total, _ = total_objective(comps, w)
            values = {
                "gan_g": float(comps["gan_g_fc"].data) + float(comps["gan_g_sc"].data),
                "gan_d": float(d_fc_loss.data) + float(d_sc_loss.data),
                "cyc": float(comps["cyc"].data),
                "id": float(comps["id"].data),
                "sp_mse": float(comps["sp_mse"].data) if w.sp_enabled else 0.0,
                "sp_pcc": float(comps["sp_pcc"].data) if w.sp_enabled else 0.0,
                "total": float(g_total.data),
            }
            for k, v in values.items():
                sums[k] += _finite(k, v, epoch, steps)
            E.backward(g_total, g_params)
            d_params.zero_grad()
            E.adam_step(g_params, ck.adam_g, cfg.lr, cfg.weight_decay)
            steps += 1

        row = {"epoch": epoch + 1, **{k: sums[k] / steps for k in LossReport.FIELDS}}
        if not w.sp_enabled:
            row["sp_mse"] = row["sp_pcc"] = None
        ck.history.append(row)
        ck.epoch = epoch + 1
        ck.buffers = {"FC": buf_fc.to_array(n), "SC": buf_sc.to_array(n)}
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(format_log_row(row) + "\n")
        if checkpoint_dir is not None and cfg.checkpoint_every and ck.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(ck, Path(checkpoint_dir) / f"epoch{ck.epoch:04d}.sfcg")
        log.info("epoch %d: cyc=%.4f total=%.4f", ck.epoch, row["cyc"], row["total"])
        if on_epoch is not None:
            on_epoch(ck.epoch, row)
    return ck, ck.history


def format_log_row(row: dict) -> str:
    cells = [str(row["epoch"])]
    for k in LossReport.FIELDS:
        v = row[k]
        cells.append("" if v is None else repr(float(v)))
    return ",".join(cells)
