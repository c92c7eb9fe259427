"""Connectome containers, CSV/manifest I/O, SC normalization and thresholding."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

SYMMETRY_TOL = 1e-6


class ValidationError(ValueError):
    """Input data violates a connectome or manifest contract."""


class Domain(str, Enum):
    FC = "FC"
    SC = "SC"

    @classmethod
    def parse(cls, value: "Domain | str") -> "Domain":
        if isinstance(value, Domain):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(f"unknown domain {value!r}; expected FC or SC") from None

    @property
    def value_range(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self is Domain.FC else (0.0, 1.0)

    @property
    def other(self) -> "Domain":
        return Domain.SC if self is Domain.FC else Domain.FC


@dataclass
class Connectome:
    values: np.ndarray
    domain: Domain
    subject_id: str = ""
    label: int | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class BinaryGraph:
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    return (m + m.T) / 2


def validate(values: np.ndarray, domain: Domain | str, expected_n: int | None = None,
             subject_id: str = "", label: int | None = None) -> Connectome:
    """Check a raw matrix against the domain contract and return a clean Connectome.

    Asymmetry up to ``SYMMETRY_TOL`` is absorbed by hard symmetrization, and
    the diagonal is reset (1 for FC, 0 for SC).
    """
    domain = Domain.parse(domain)
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"connectome must be square, got shape {m.shape}")
    if m.shape[0] < 2:
        raise ValidationError("connectome needs at least 2 nodes")
    if expected_n is not None and m.shape[0] != expected_n:
        raise ValidationError(f"expected {expected_n} nodes, got {m.shape[0]}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("connectome contains NaN or Inf")
    asym = float(np.max(np.abs(m - m.T)))
    if asym > SYMMETRY_TOL:
        raise ValidationError(f"connectome asymmetry {asym:.3g} exceeds {SYMMETRY_TOL}")
    m = symmetrize(m)
    off = ~np.eye(m.shape[0], dtype=bool)
    if domain is Domain.FC:
        if np.any(np.abs(m[off]) > 1 + SYMMETRY_TOL):
            raise ValidationError("FC entry outside [-1, 1]")
        m = np.clip(m, -1.0, 1.0)
        np.fill_diagonal(m, 1.0)
    else:
        if np.any(m[off] < -SYMMETRY_TOL):
            raise ValidationError("SC entry is negative")
        if np.any(m[off] > 1 + SYMMETRY_TOL):
            raise ValidationError("SC entry above 1; normalize fiber counts with normalize_sc first")
        m = np.clip(m, 0.0, 1.0)
        np.fill_diagonal(m, 0.0)
    return Connectome(m, domain, subject_id, label)


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path) as fh:
            rows = [line.strip() for line in fh if line.strip()]
    except FileNotFoundError:
        raise ValidationError(f"connectome file not found: {path}") from None
    try:
        data = [[float(tok) for tok in row.split(",")] for row in rows]
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if not data or any(len(r) != len(data) for r in data):
        raise ValidationError(f"{path}: expected n rows of n comma-separated values")
    return np.array(data)


def load_connectome(path: str | os.PathLike, domain: Domain | str, expected_n: int | None = None,
                    subject_id: str | None = None, label: int | None = None) -> Connectome:
    m = read_matrix(path)
    try:
        return validate(m, domain, expected_n, subject_id if subject_id is not None else Path(path).stem, label)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def save_connectome(c: Connectome, path: str | os.PathLike) -> None:
    # 17 significant digits round-trips float64 exactly
    lines = [",".join(f"{v:.17g}" for v in row) for row in c.values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def normalize_sc(raw: np.ndarray, sc_max: float | None = None, subject_id: str = "",
                 label: int | None = None) -> tuple[Connectome, float]:
    """Map fiber counts to [0, 1] via ``log1p(s) / log1p(sc_max)``."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise ValidationError("fiber counts must be nonnegative")
    raw = symmetrize(raw)
    if sc_max is None:
        sc_max = float(raw.max())
    if sc_max <= 0:
        if sc_max == 0 and not raw.any():
            return Connectome(np.zeros_like(raw), Domain.SC, subject_id, label), 0.0
        raise ValidationError(f"sc_max must be positive, got {sc_max}")
    s = np.clip(np.log1p(raw) / math.log1p(sc_max), 0.0, 1.0)
    np.fill_diagonal(s, 0.0)
    return Connectome(s, Domain.SC, subject_id, label), float(sc_max)


def denormalize_sc(c: Connectome, sc_max: float) -> np.ndarray:
    if c.domain is not Domain.SC:
        raise ValidationError("denormalize_sc needs an SC connectome")
    if sc_max <= 0:
        raise ValidationError(f"sc_max must be positive, got {sc_max}")
    return np.expm1(c.values * math.log1p(sc_max))


def threshold_binary(c: Connectome, mode: str, value: float) -> BinaryGraph:
    """Binarize by ``absolute`` (|w| > tau) or ``proportional`` (top fraction by |w|)."""
    m = np.abs(np.asarray(c.values, dtype=np.float64))
    n = m.shape[0]
    adj = np.zeros((n, n), dtype=bool)
    if mode == "absolute":
        if value < 0:
            raise ValidationError(f"absolute threshold must be >= 0, got {value}")
        adj = m > value
    elif mode == "proportional":
        if not 0 < value <= 1:
            raise ValidationError(f"proportional threshold must be in (0, 1], got {value}")
        iu, ju = np.triu_indices(n, 1)
        mags = m[iu, ju]
        k = int(math.floor(value * len(mags) + 1e-9))
        # stable sort on -|w| keeps row-major (i, j) order among ties
        order = np.argsort(-mags, kind="stable")
        keep = order[:k]
        keep = keep[mags[keep] > 0]
        adj[iu[keep], ju[keep]] = True
    else:
        raise ValidationError(f"unknown threshold mode {mode!r}")
    adj = adj | adj.T
    np.fill_diagonal(adj, False)
    return BinaryGraph(adj)


def top_edges(c: Connectome, fraction: float) -> list[tuple[int, int, float]]:
    """Exactly floor(fraction * n(n-1)/2) upper-triangle edges, strongest |w| first.

    Ties (including zero weights) keep row-major (i, j) order.
    """
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    m = np.asarray(c.values, dtype=np.float64)
    iu, ju = np.triu_indices(m.shape[0], 1)
    w = m[iu, ju]
    k = int(math.floor(fraction * len(w) + 1e-9))
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    return [(int(iu[t]), int(ju[t]), float(w[t])) for t in order]


def vectorize_upper(c: Connectome | np.ndarray) -> np.ndarray:
    m = c.values if isinstance(c, Connectome) else np.asarray(c)
    return m[np.triu_indices(m.shape[0], 1)]


@dataclass
class Subject:
    id: str
    fc_path: Path
    sc_path: Path
    label: int
    split: str


@dataclass
class DatasetManifest:
    n: int
    sc_max: float
    subjects: list[Subject] = field(default_factory=list)
    path: Path | None = None

    def split(self, name: str) -> list[Subject]:
        return [s for s in self.subjects if s.split == name]

    @property
    def split_counts(self) -> tuple[int, int]:
        return len(self.split("train")), len(self.split("test"))

    def load_pair(self, subject: Subject) -> tuple[Connectome, Connectome]:
        fc = load_connectome(subject.fc_path, Domain.FC, self.n, subject.id, subject.label)
        sc = load_connectome(subject.sc_path, Domain.SC, self.n, subject.id, subject.label)
        return fc, sc

    def load_split(self, name: str) -> tuple[list[Connectome], list[Connectome]]:
        pairs = [self.load_pair(s) for s in self.split(name)]
        return [p[0] for p in pairs], [p[1] for p in pairs]


_SUBJECT_KEYS = {"id": str, "fc": str, "sc": str, "label": int, "split": str}


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or set(doc) != {"n", "sc_max", "subjects"}:
        raise ValidationError(f"{path}: manifest must have exactly keys n, sc_max, subjects")
    n, sc_max, subjects = doc["n"], doc["sc_max"], doc["subjects"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 2:
        raise ValidationError(f"{path}: n must be an integer >= 2")
    if not isinstance(sc_max, (int, float)) or isinstance(sc_max, bool) or sc_max <= 0:
        raise ValidationError(f"{path}: sc_max must be a positive number")
    if not isinstance(subjects, list):
        raise ValidationError(f"{path}: subjects must be a list")
    base = path.parent
    out: list[Subject] = []
    seen: set[str] = set()
    for i, s in enumerate(subjects):
        if not isinstance(s, dict):
            raise ValidationError(f"{path}: subject #{i} is not an object")
        missing = set(_SUBJECT_KEYS) - set(s)
        extra = set(s) - set(_SUBJECT_KEYS)
        if missing or extra:
            raise ValidationError(f"{path}: subject #{i} missing {sorted(missing)} / unknown {sorted(extra)}")
        for key, typ in _SUBJECT_KEYS.items():
            if not isinstance(s[key], typ) or isinstance(s[key], bool):
                raise ValidationError(f"{path}: subject #{i} field {key!r} must be {typ.__name__}")
        if s["split"] not in ("train", "test"):
            raise ValidationError(f"{path}: subject {s['id']!r} split must be train or test")
        if s["id"] in seen:
            raise ValidationError(f"{path}: duplicate subject id {s['id']!r}")
        seen.add(s["id"])
        fc_path, sc_path = base / s["fc"], base / s["sc"]
        for p in (fc_path, sc_path):
            if not p.is_file():
                raise ValidationError(f"{path}: subject {s['id']!r} references missing file {p}")
        out.append(Subject(s["id"], fc_path, sc_path, s["label"], s["split"]))
    return DatasetManifest(n=n, sc_max=float(sc_max), subjects=out, path=path)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    path = Path(path)
    base = path.parent
    doc = {
        "n": manifest.n,
        "sc_max": manifest.sc_max,
        "subjects": [
            {"id": s.id, "fc": os.path.relpath(s.fc_path, base), "sc": os.path.relpath(s.sc_path, base),
             "label": s.label, "split": s.split}
            for s in manifest.subjects
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
