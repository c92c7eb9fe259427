"""Translation quality: similarity metrics, binary graph properties, APD reports."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .connectome import BinaryGraph, Connectome, DatasetManifest, Domain, ValidationError, threshold_binary

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

SIM_FIELDS = ("mse", "mae", "ssim", "pearson", "cosine")
GRAPH_FIELDS = ("density", "cpl", "efficiency", "modularity")
REPORT_COLUMNS = ("subject", "direction") + SIM_FIELDS + tuple(f"apd_{g}" for g in GRAPH_FIELDS)
RAW_FIELDS = frozenset({"mse", "mae"})


@dataclass
class SimilarityMetrics:
    mse: float
    mae: float
    ssim: float
    pearson: float
    cosine: float
    ssim_global: bool = False


@dataclass
class GraphProperties:
    density: float
    cpl: float | None
    efficiency: float
    modularity: float | None
    unreachable_pairs: int = 0


@dataclass
class ThresholdConfig:
    fc_mode: str = "absolute"
    fc_value: float = 0.2
    sc_mode: str = "absolute"
    sc_value: float = 0.01

    def for_domain(self, domain: Domain) -> tuple[str, float]:
        return (self.fc_mode, self.fc_value) if domain is Domain.FC else (self.sc_mode, self.sc_value)


# -- similarity ---------------------------------------------------------------

def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, w.shape)
    return np.einsum("ijkl,kl->ij", win, w)


def ssim(x: np.ndarray, y: np.ndarray, data_range: float) -> tuple[float, bool]:
    """Mean SSIM over valid Gaussian windows; returns (value, used_global_fallback)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    if min(x.shape) < SSIM_WINDOW:
        mx, my = x.mean(), y.mean()
        vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
        cxy = ((x - mx) * (y - my)).mean()
        return float((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))), True
    w = gaussian_window()
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    vx = _filter_valid(x * x, w) - mx * mx
    vy = _filter_valid(y * y, w) - my * my
    cxy = _filter_valid(x * y, w) - mx * my
    s = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean()), False


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r of flattened arrays; 0 when either side is constant."""
    a = np.ravel(x).astype(np.float64)
    b = np.ravel(y).astype(np.float64)
    if np.array_equal(a, b):
        return 1.0
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return 0.0 if den == 0 else float(np.clip((a @ b) / den, -1.0, 1.0))


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    a = np.ravel(x).astype(np.float64)
    b = np.ravel(y).astype(np.float64)
    if np.array_equal(a, b):
        return 1.0
    den = math.sqrt(float(a @ a) * float(b @ b))
    return 0.0 if den == 0 else float(np.clip((a @ b) / den, -1.0, 1.0))


def similarity_metrics(truth: Connectome, pred: Connectome) -> SimilarityMetrics:
    if truth.domain is not pred.domain:
        raise ValidationError(f"domain mismatch: {truth.domain.value} vs {pred.domain.value}")
    t = np.asarray(truth.values, dtype=np.float64)
    p = np.asarray(pred.values, dtype=np.float64)
    if t.shape != p.shape:
        raise ValidationError(f"shape mismatch: {t.shape} vs {p.shape}")
    d = p - t
    lo, hi = truth.domain.value_range
    s, flag = ssim(t, p, hi - lo)
    return SimilarityMetrics(float(np.mean(d * d)), float(np.mean(np.abs(d))), 100 * s,
                             100 * pearson(t, p), 100 * cosine(t, p), flag)


# -- graph properties ---------------------------------------------------------

def _check(g: BinaryGraph) -> np.ndarray:
    a = np.asarray(g.adjacency, dtype=bool)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("adjacency must be square")
    if a.shape[0] < 2:
        raise ValidationError("graph needs n >= 2")
    return a


def density(g: BinaryGraph) -> float:
    a = _check(g)
    n = a.shape[0]
    return float(np.triu(a, 1).sum() * 2 / (n * (n - 1)))


def _pair_distances(a: np.ndarray) -> np.ndarray:
    d = kernels.hop_distances(a.astype(np.uint8))
    return d[np.triu_indices(a.shape[0], 1)]


def characteristic_path_length(g: BinaryGraph) -> tuple[float, int]:
    """Mean hop distance over reachable unordered pairs, plus the number of excluded pairs."""
    d = _pair_distances(_check(g))
    reach = d[d > 0]
    if reach.size == 0:
        raise ValidationError("no reachable node pairs")
    return float(reach.mean()), int(d.size - reach.size)


def global_efficiency(g: BinaryGraph) -> float:
    d = _pair_distances(_check(g))
    inv = np.zeros(d.shape)
    np.divide(1.0, d, out=inv, where=d > 0)
    return float(inv.mean())


def _merge_phase(a: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Agglomerate communities while some pair has a positive gain.

    Gains use the exact integer form 2m * L_ij - D_i * D_j (proportional to
    the change in Q); ties go to the lexicographically smallest (i, j).
    """
    n = a.shape[0]
    onehot = np.zeros((n, n), dtype=np.int64)
    onehot[np.arange(n), labels] = 1
    links = onehot.T @ a.astype(np.int64) @ onehot
    np.fill_diagonal(links, 0)
    deg = onehot.T @ a.sum(1).astype(np.int64)
    alive = onehot.any(0)
    while True:
        gain = 2 * m * links - np.outer(deg, deg)
        gain[~np.triu(np.outer(alive, alive), 1)] = -1
        best = int(np.argmax(gain))  # first maximum in row-major order
        i, j = divmod(best, n)
        if gain[i, j] <= 0:
            break
        links[i] += links[j]
        links[:, i] += links[:, j]
        links[i, i] = 0
        links[j] = 0
        links[:, j] = 0
        deg[i] += deg[j]
        deg[j] = 0
        alive[j] = False
        labels = np.where(labels == j, i, labels)
    return labels


def _q_int(ai: np.ndarray, k: np.ndarray, labels: np.ndarray, m: int) -> int:
    """4m^2 * Q as an exact integer."""
    n = ai.shape[0]
    onehot = np.zeros((n, n), dtype=np.int64)
    onehot[np.arange(n), labels] = 1
    inner = int(np.einsum("ic,ij,jc->", onehot, ai, onehot))  # 2 * edges inside communities
    d_c = k @ onehot
    return 2 * m * inner - int(d_c @ d_c)


def _fine_tune(a: np.ndarray, labels: np.ndarray, m: int) -> tuple[np.ndarray, bool]:
    """Kernighan-Lin style passes over single-node moves.

    Each pass moves every node exactly once, always taking the best available
    move (even a losing one) among unmoved nodes; a node may also leave for an
    empty community. The best partition seen during the pass is kept. Passes
    repeat while they improve Q. Gains are exact integers (2m^2 * dQ) and ties
    go to the smallest (node, community).
    """
    n = a.shape[0]
    ai = a.astype(np.int64)
    k = ai.sum(1)
    labels = labels.copy()
    improved_any = False
    while True:
        start_q = _q_int(ai, k, labels, m)
        best_q, best_labels = start_q, labels.copy()
        q = start_q
        locked = np.zeros(n, dtype=bool)
        cur = labels.copy()
        for _ in range(n):
            onehot = np.zeros((n, n), dtype=np.int64)
            onehot[np.arange(n), cur] = 1
            k_vc = ai @ onehot                      # (v, c) edges from v into c
            d_c = k @ onehot                        # degree per community
            own = cur
            k_own = k_vc[np.arange(n), own]
            d_own = d_c[own] - k                    # own community without v
            # 2m^2 dQ for v: own -> c
            gain = 2 * m * (k_vc - k_own[:, None]) - k[:, None] * (d_c[None, :] - d_own[:, None])
            gain[np.arange(n), own] = np.iinfo(np.int64).min
            # leaving to an empty community only makes sense once; keep the smallest empty label
            empty = np.flatnonzero(d_c == 0)
            occupied = onehot.any(0)
            mask = occupied.copy()
            if empty.size:
                mask[empty[0]] = True
            gain[:, ~mask] = np.iinfo(np.int64).min
            gain[locked] = np.iinfo(np.int64).min
            v, c = divmod(int(np.argmax(gain)), n)
            if gain[v, c] == np.iinfo(np.int64).min:
                break
            q += 2 * int(gain[v, c])
            cur[v] = c
            locked[v] = True
            if q > best_q:
                best_q, best_labels = q, cur.copy()
        if best_q <= start_q:
            return labels, improved_any
        labels = best_labels
        improved_any = True


def _spectral_split(a: np.ndarray, m: int, labels: np.ndarray) -> np.ndarray:
    """Recursive leading-eigenvector bisection of every community in ``labels``."""
    n = a.shape[0]
    k = a.sum(1).astype(np.float64)
    b = a.astype(np.float64) - np.outer(k, k) / (2 * m)
    labels = labels.copy()
    queue = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    next_label = int(labels.max()) + 1
    while queue:
        idx = queue.pop(0)
        if idx.size < 2:
            continue
        bg = b[np.ix_(idx, idx)]
        bg = bg - np.diag(bg.sum(1))
        vals, vecs = np.linalg.eigh(bg)
        if vals[-1] <= 1e-10:
            continue
        side = vecs[:, -1] > 0
        if side.all() or not side.any():
            continue
        s = np.where(side, 1.0, -1.0)
        if s @ bg @ s <= 1e-10:   # no modularity gain
            continue
        labels[idx[side]] = next_label
        next_label += 1
        queue += [idx[~side], idx[side]]
    _, labels = np.unique(labels, return_inverse=True)
    return labels


def _polish(a: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Alternate fine-tuning and merging until neither changes the partition."""
    while True:
        labels, moved = _fine_tune(a, labels, m)
        if not moved:
            return labels
        labels = _merge_phase(a, labels, m)


def modularity(g: BinaryGraph, refine: bool = True) -> tuple[float, list[list[int]]]:
    """Greedy agglomerative modularity maximization.

    With ``refine`` the merge phase alternates with Kernighan-Lin style
    single-node fine-tuning until neither improves Q. A fine-tuned
    leading-eigenvector bisection is tried as a second start, and the winner
    is then re-split spectrally and re-tuned while that raises Q. Ties keep
    the agglomerative partition. ``refine=False`` is plain pairwise
    agglomeration.
    """
    a = _check(g)
    n = a.shape[0]
    m = int(np.triu(a, 1).sum())
    if m == 0:
        raise ValidationError("modularity needs at least one edge")
    ai = a.astype(np.int64)
    k = ai.sum(1)
    labels = _merge_phase(a, np.arange(n), m)
    if refine:
        best, best_q = None, None
        for lab in (labels, _spectral_split(a, m, np.zeros(n, dtype=np.int64))):
            lab = _polish(a, lab, m)
            q = _q_int(ai, k, lab, m)
            if best_q is None or q > best_q:
                best, best_q = lab, q
        while True:
            lab = _polish(a, _spectral_split(a, m, best), m)
            q = _q_int(ai, k, lab, m)
            if q <= best_q:
                break
            best, best_q = lab, q
        labels = best
    groups: dict[int, list[int]] = {}
    for v, c in enumerate(labels):
        groups.setdefault(int(c), []).append(v)
    parts = sorted(groups.values())
    return partition_modularity(a, parts), parts


def partition_modularity(adj: np.ndarray, parts) -> float:
    """Q = sum_c [e_c / m - (d_c / 2m)^2]."""
    a = np.asarray(adj, dtype=bool)
    m = int(np.triu(a, 1).sum())
    deg = a.sum(1)
    q = 0.0
    for c in parts:
        idx = np.asarray(c, dtype=int)
        e_c = int(np.triu(a[np.ix_(idx, idx)], 1).sum())
        d_c = int(deg[idx].sum())
        q += e_c / m - (d_c / (2 * m)) ** 2
    return q


def graph_properties(g: BinaryGraph) -> GraphProperties:
    try:
        cpl, missing = characteristic_path_length(g)
    except ValidationError:
        cpl, missing = None, g.n * (g.n - 1) // 2
    q = modularity(g)[0] if g.n_edges else None
    return GraphProperties(density(g), cpl, global_efficiency(g), q, missing)


def apd(translated_value: float, truth_value: float) -> float | None:
    """Absolute percentage difference; None when the truth is zero (skipped)."""
    if truth_value == 0:
        return None
    return abs(translated_value - truth_value) / abs(truth_value) * 100.0


# -- dataset evaluation -------------------------------------------------------

@dataclass
class EvalRow:
    subject: str
    direction: str
    metrics: dict[str, float | None]


@dataclass
class EvalReport:
    rows: list[EvalRow]
    failures: list[tuple[str, str, str]] = field(default_factory=list)
    ssim_global: bool = False

    def directions(self) -> list[str]:
        return sorted({r.direction for r in self.rows})

    def aggregate(self, direction: str) -> tuple[dict, dict]:
        """Mean and population std per metric, skipping missing values."""
        mean, std = {}, {}
        for k in SIM_FIELDS + tuple(f"apd_{g}" for g in GRAPH_FIELDS):
            vals = np.array([r.metrics[k] for r in self.rows if r.direction == direction and r.metrics[k] is not None])
            mean[k] = float(vals.mean()) if vals.size else None
            std[k] = float(vals.std()) if vals.size else None
        return mean, std

    def summary(self) -> dict[str, dict[str, str]]:
        """``"m ± s"`` strings per direction and metric."""
        out = {}
        for d in self.directions():
            mean, std = self.aggregate(d)
            out[d] = {k: "n/a" if mean[k] is None else f"{_fmt(k, mean[k])} ± {_fmt(k, std[k])}" for k in mean}
        return out


def _fmt(key: str, value: float | None) -> str:
    if value is None:
        return ""
    return f"{value:.4f}" if key in RAW_FIELDS else f"{value:.2f}"


Translator = Callable[[Connectome], Connectome]


def evaluate_pair(truth: Connectome, pred: Connectome, thresholds: ThresholdConfig) -> dict[str, float | None]:
    sim = similarity_metrics(truth, pred)
    mode, value = thresholds.for_domain(truth.domain)
    gt = graph_properties(threshold_binary(truth, mode, value))
    gp = graph_properties(threshold_binary(pred, mode, value))
    row: dict[str, float | None] = {k: getattr(sim, k) for k in SIM_FIELDS}
    for k in GRAPH_FIELDS:
        t, p = getattr(gt, k), getattr(gp, k)
        # an undefined translated property against a defined truth counts as total loss
        row[f"apd_{k}"] = None if t is None else apd(0.0 if p is None else p, t)
    row["_ssim_global"] = sim.ssim_global
    return row


def evaluate_dataset(manifest: DatasetManifest, translators: Mapping[Domain, Translator],
                     thresholds: ThresholdConfig | None = None, split: str = "test") -> EvalReport:
    """Translate every subject of ``split`` both ways and score against the paired truth.

    ``translators[Domain.FC]`` maps an SC connectome to FC, and vice versa.
    """
    thresholds = thresholds or ThresholdConfig()
    subjects = sorted(manifest.split(split), key=lambda s: s.id)
    if not subjects:
        raise ValidationError(f"{split} split is empty")
    rows, failures, flag = [], [], False
    for s in subjects:
        try:
            fc, sc = manifest.load_pair(s)
        except (OSError, ValidationError) as exc:
            failures.append((s.id, "*", str(exc)))
            continue
        for target, src, truth in ((Domain.FC, sc, fc), (Domain.SC, fc, sc)):
            try:
                pred = translators[target](src)
                metrics = evaluate_pair(truth, pred, thresholds)
            except Exception as exc:  # recorded per subject; the run continues
                failures.append((s.id, target.value, f"{type(exc).__name__}: {exc}"))
                continue
            flag |= bool(metrics.pop("_ssim_global"))
            rows.append(EvalRow(s.id, target.value, metrics))
    rows.sort(key=lambda r: (r.direction, r.subject))
    return EvalReport(rows, failures, flag)


def checkpoint_translators(models) -> dict[Domain, Translator]:
    return {Domain.FC: models.g_fc.translate, Domain.SC: models.g_sc.translate}


def write_report(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow([r.subject, r.direction] + [_fmt(k, r.metrics[k]) for k in REPORT_COLUMNS[2:]])
        for d in report.directions():
            mean, std = report.aggregate(d)
            w.writerow(["mean", d] + [_fmt(k, mean[k]) for k in REPORT_COLUMNS[2:]])
            w.writerow(["std", d] + [_fmt(k, std[k]) for k in REPORT_COLUMNS[2:]])


def report_to_dict(report: EvalReport) -> dict:
    return {"rows": [asdict(r) for r in report.rows], "failures": report.failures,
            "ssim_global": report.ssim_global}
