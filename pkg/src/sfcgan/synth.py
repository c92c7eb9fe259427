"""Synthetic paired SC/FC cohorts with a known SC -> FC map."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .connectome import (Connectome, DatasetManifest, Domain, Subject, ValidationError, normalize_sc,
                         save_connectome, symmetrize, write_manifest)


@dataclass
class SynthConfig:
    n: int = 32
    modules: int = 4
    subjects_per_class: int = 50
    classes: int = 2
    noise_std: float = 0.05
    alpha: float = 1.0
    beta: float = 0.2
    seed: int = 0
    sc_max: float = 1000.0
    p_in: float = 0.9
    p_out: float = 0.15
    w_in: float = 200.0
    w_out: float = 20.0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n < 8:
            raise ValidationError(f"synthetic n must be >= 8, got {self.n}")
        if self.modules < 1:
            raise ValidationError("modules must be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.classes < 1 or self.subjects_per_class < 1:
            raise ValidationError("classes and subjects_per_class must be >= 1")
        if not 0 <= self.test_fraction < 1:
            raise ValidationError("test_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def communities(n: int, modules: int) -> np.ndarray:
    """Contiguous, near-equal blocks: node i belongs to block ``i * modules // n``."""
    return (np.arange(n) * modules) // n


def gen_sc(cfg: SynthConfig, subject_seed: int, label: int = 0) -> Connectome:
    """Block-model fiber counts, log-normalized. Class ``c`` uses ``modules + c`` blocks."""
    rng = np.random.default_rng([cfg.seed, subject_seed])
    n = cfg.n
    block = communities(n, cfg.modules + label)
    same = block[:, None] == block[None, :]
    p = np.where(same, cfg.p_in, cfg.p_out)
    med = np.where(same, cfg.w_in, cfg.w_out)
    present = rng.random((n, n)) < p
    counts = np.round(med * rng.lognormal(0.0, 0.5, size=(n, n))) * present
    counts = np.minimum(np.triu(counts, 1), cfg.sc_max)
    counts = counts + counts.T
    sc, _ = normalize_sc(counts, cfg.sc_max, subject_id=f"seed{subject_seed}", label=label)
    return sc


def sc_to_fc_ground_truth(sc: Connectome, alpha: float, beta: float, noise_std: float,
                          noise_seed: int) -> Connectome:
    """``tanh(alpha * (S + beta * S @ S))`` plus symmetric Gaussian noise, unit diagonal."""
    if sc.domain is not Domain.SC:
        raise ValidationError("sc_to_fc_ground_truth needs an SC connectome")
    s = sc.values
    f = np.tanh(alpha * (s + beta * (s @ s)))
    if noise_std > 0:
        rng = np.random.default_rng(noise_seed)
        upper = np.triu(rng.normal(0.0, noise_std, size=s.shape), 1)
        f = f + upper + upper.T
    f = np.clip(symmetrize(f), -1.0, 1.0)
    np.fill_diagonal(f, 1.0)
    return Connectome(f, Domain.FC, sc.subject_id, sc.label)


def gen_pair(cfg: SynthConfig, index: int, label: int) -> tuple[Connectome, Connectome]:
    sc = gen_sc(cfg, index, label)
    fc = sc_to_fc_ground_truth(sc, cfg.alpha, cfg.beta, cfg.noise_std,
                               noise_seed=int(np.random.default_rng([cfg.seed, index, 1]).integers(2**63)))
    return fc, sc


def gen_dataset(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write ``fc/``, ``sc/`` CSVs and ``manifest.json``; split stratified by class."""
    out = Path(out_dir)
    (out / "fc").mkdir(parents=True, exist_ok=True)
    (out / "sc").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 2**31])
    n_test = int(math.floor(cfg.subjects_per_class * cfg.test_fraction + 1e-9))
    subjects: list[Subject] = []
    index = 0
    for label in range(cfg.classes):
        test_idx = set(rng.permutation(cfg.subjects_per_class)[:n_test].tolist())
        for k in range(cfg.subjects_per_class):
            sid = f"sub-{index:04d}"
            fc, sc = gen_pair(cfg, index, label)
            fc_path, sc_path = out / "fc" / f"{sid}.csv", out / "sc" / f"{sid}.csv"
            save_connectome(fc, fc_path)
            save_connectome(sc, sc_path)
            subjects.append(Subject(sid, fc_path, sc_path, label, "test" if k in test_idx else "train"))
            index += 1
    manifest = DatasetManifest(n=cfg.n, sc_max=cfg.sc_max, subjects=subjects, path=out / "manifest.json")
    write_manifest(manifest, manifest.path)
    return manifest
