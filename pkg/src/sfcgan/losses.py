"""Adversarial, cycle, identity and structure-preserving losses.

All functions take (B, n, n) tensors (or arrays) and return scalar tensors,
so the same code path serves training and gradient checks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping

from . import engine as E

PROB_EPS = 1e-7

GeneratorFn = Callable[[E.Tensor], E.Tensor]


@dataclass
class LossWeights:
    adv: float = 1.0
    cyc: float = 1.0
    id: float = 1.0
    sp: float = 1.0
    sp_enabled: bool = True
    sp_pairing: str = "literal"
    pcc_rows: str = "mean"

    def __post_init__(self):
        for name in ("adv", "cyc", "id", "sp"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if self.sp_pairing not in ("literal", "paired"):
            raise ValueError(f"sp_pairing must be 'literal' or 'paired', got {self.sp_pairing!r}")
        if self.pcc_rows not in ("mean", "sum"):
            raise ValueError(f"pcc_rows must be 'mean' or 'sum', got {self.pcc_rows!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    gan_g: float
    gan_d: float
    cyc: float
    id: float
    sp_mse: float
    sp_pcc: float
    total: float

    FIELDS = ("gan_g", "gan_d", "cyc", "id", "sp_mse", "sp_pcc", "total")

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.FIELDS}


def _probs(p) -> E.Tensor:
    p = E.as_tensor(p)
    if p.data.size == 0:
        raise ValueError("empty probability batch")
    return E.clip(p, PROB_EPS, 1 - PROB_EPS)


def gan_loss_discriminator(d_real, d_fake) -> E.Tensor:
    """``-mean log D(real) - mean log(1 - D(fake))``."""
    real, fake = _probs(d_real), _probs(d_fake)
    return -E.mean(E.log(real)) - E.mean(E.log(1.0 - fake))


def gan_loss_generator(d_fake) -> E.Tensor:
    """Non-saturating generator loss ``-mean log D(fake)``."""
    return -E.mean(E.log(_probs(d_fake)))


def l1(a, b) -> E.Tensor:
    a, b = E.as_tensor(a), E.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return E.mean(E.tabs(a - b))


def mse(a, b) -> E.Tensor:
    a, b = E.as_tensor(a), E.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return E.mean(d * d)


def cycle_loss(g_fc: GeneratorFn, g_sc: GeneratorFn, x_fc, x_sc, fake_fc=None, fake_sc=None) -> E.Tensor:
    """Mean L1 of SC -> FC -> SC and FC -> SC -> FC reconstructions.

    Precomputed ``fake_fc = g_fc(x_sc)`` / ``fake_sc = g_sc(x_fc)`` may be
    passed to avoid a second forward pass.
    """
    x_fc, x_sc = E.as_tensor(x_fc), E.as_tensor(x_sc)
    if x_fc.shape != x_sc.shape:
        raise ValueError(f"FC/SC batch shapes differ: {x_fc.shape} vs {x_sc.shape}")
    fake_fc = g_fc(x_sc) if fake_fc is None else fake_fc
    fake_sc = g_sc(x_fc) if fake_sc is None else fake_sc
    return l1(g_sc(fake_fc), x_sc) + l1(g_fc(fake_sc), x_fc)


def identity_loss(g_fc: GeneratorFn, g_sc: GeneratorFn, x_fc, x_sc) -> E.Tensor:
    x_fc, x_sc = E.as_tensor(x_fc), E.as_tensor(x_sc)
    if x_fc.shape != x_sc.shape:
        raise ValueError(f"FC/SC batch shapes differ: {x_fc.shape} vs {x_sc.shape}")
    return l1(g_fc(x_fc), x_fc) + l1(g_sc(x_sc), x_sc)


def pcc_loss(x, y, rows: str = "mean") -> E.Tensor:
    """``(1 - r_whole) + (1 - mean_i r_row_i)``, averaged over the batch.

    ``rows="sum"`` sums the per-row deficits instead of averaging them.
    """
    x, y = E.as_tensor(x), E.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.data.ndim == 2:
        x = E.reshape(x, (1,) + x.shape)
        y = E.reshape(y, (1,) + y.shape)
    if x.shape[-1] < 2:
        raise ValueError("pcc_loss needs n >= 2")
    r_whole = E.pearson(x, y, axis=(-2, -1))
    r_rows = E.pearson(x, y, axis=-1)
    if rows == "mean":
        per_sample = 2.0 - r_whole - E.mean(r_rows, axis=-1)
    elif rows == "sum":
        per_sample = (1.0 - r_whole) + E.tsum(1.0 - r_rows, axis=-1)
    else:
        raise ValueError(f"rows must be 'mean' or 'sum', got {rows!r}")
    return E.mean(per_sample)


def sp_loss(x_fc, x_sc, fake_fc, fake_sc, pairing: str = "literal", rows: str = "mean") -> tuple[E.Tensor, E.Tensor]:
    """Structure-preserving terms ``(sp_mse, sp_pcc)``.

    ``fake_fc = G_FC(x_sc)`` and ``fake_sc = G_SC(x_fc)`` for the same subjects.
    ``literal`` correlates each source with its own translation;
    ``paired`` correlates each translation with its ground truth.
    """
    shapes = {E.as_tensor(t).shape for t in (x_fc, x_sc, fake_fc, fake_sc)}
    if len(shapes) != 1:
        raise ValueError(f"unpaired batch: shapes {sorted(shapes)}")
    if pairing == "literal":
        pcc = pcc_loss(x_fc, fake_sc, rows) + pcc_loss(x_sc, fake_fc, rows)
    elif pairing == "paired":
        pcc = pcc_loss(x_sc, fake_sc, rows) + pcc_loss(x_fc, fake_fc, rows)
    else:
        raise ValueError(f"unknown sp pairing {pairing!r}")
    return mse(x_fc, fake_fc) + mse(x_sc, fake_sc), pcc


def total_objective(c: Mapping[str, object], w: LossWeights):
    """Weighted generator and discriminator totals.

    ``c`` holds per-direction adversarial terms (``gan_g_fc``, ``gan_g_sc``,
    ``gan_d_fc``, ``gan_d_sc``) plus ``cyc``, ``id`` and, when the structure
    term is enabled, ``sp_mse`` and ``sp_pcc``. Values may be tensors or floats.
    """
    w.__post_init__()  # fields are mutable; re-check signs before use
    gen = w.adv * (c["gan_g_fc"] + c["gan_g_sc"]) + w.cyc * c["cyc"] + w.id * c["id"]
    if w.sp_enabled:
        gen = gen + w.sp * (c["sp_mse"] + c["sp_pcc"])
    disc = w.adv * (c["gan_d_fc"] + c["gan_d_sc"])
    return gen, disc
