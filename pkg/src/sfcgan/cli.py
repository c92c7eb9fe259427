"""``sfcgan`` command line: synth, train, translate, eval, classify, render.

Settings resolve as built-in defaults, then the ``--config`` JSON file, then
command-line flags. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .connectome import Connectome, Domain, ValidationError, load_manifest, save_connectome, top_edges
from .model import CheckpointError

log = logging.getLogger("sfcgan")

SUBCOMMANDS = ("synth", "train", "translate", "eval", "classify", "render")


@dataclass
class RunConfig:
    # synthetic data
    n: int = 32
    modules: int = 4
    subjects_per_class: int = 50
    classes: int = 2
    noise_std: float = 0.05
    alpha: float = 1.0
    beta: float = 0.2
    sc_max: float = 1000.0
    test_fraction: float = 0.2
    # training
    seed: int = 0
    epochs: int = 200
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 4
    replay_buffer_size: int = 50
    checkpoint_every: int = 0
    widths: str = "16,32"
    disc_widths: str = "16,32"
    # loss
    lambda_adv: float = 1.0
    lambda_cyc: float = 1.0
    lambda_id: float = 1.0
    lambda_sp: float = 1.0
    sp_enabled: bool = True
    sp_pairing: str = "literal"
    pcc_rows: str = "mean"
    # evaluation and downstream
    fc_threshold_mode: str = "absolute"
    fc_threshold: float = 0.2
    sc_threshold_mode: str = "absolute"
    sc_threshold: float = 0.01
    svm_c: float = 1.0
    top: float = 0.05
    # paths and runtime
    out: str = "out"
    data: str = ""
    checkpoint: str = ""
    resume: bool = False
    threads: int = 0

    def data_manifest(self) -> Path:
        return Path(self.data) if self.data else Path(self.out) / "data" / "manifest.json"

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "checkpoint.sfcg"


HELP = {
    "n": "node count of synthetic connectomes",
    "modules": "community count of the synthetic block model",
    "subjects_per_class": "synthetic subjects per class",
    "classes": "number of synthetic classes",
    "noise_std": "FC noise standard deviation",
    "alpha": "SC->FC map gain",
    "beta": "SC->FC map quadratic weight",
    "sc_max": "raw fiber-count maximum used for log normalization",
    "test_fraction": "per-class fraction held out for testing",
    "seed": "master seed",
    "epochs": "training epochs",
    "lr": "Adam learning rate",
    "weight_decay": "decoupled weight decay",
    "batch_size": "subjects per step",
    "replay_buffer_size": "fake-history buffer capacity (0 disables)",
    "checkpoint_every": "also write epochNNNN.sfcg every k epochs (0 = never)",
    "widths": "generator channel widths c1,c2",
    "disc_widths": "discriminator channel widths c1,c2",
    "lambda_adv": "adversarial weight",
    "lambda_cyc": "cycle weight",
    "lambda_id": "identity weight",
    "lambda_sp": "structure-preserving weight",
    "sp_enabled": "use the structure-preserving term",
    "sp_pairing": "structure term pairing: literal | paired",
    "pcc_rows": "row correlation reduction: mean | sum",
    "fc_threshold_mode": "FC binarization: absolute | proportional",
    "fc_threshold": "FC binarization value",
    "sc_threshold_mode": "SC binarization: absolute | proportional",
    "sc_threshold": "SC binarization value",
    "svm_c": "SVM regularization constant",
    "top": "fraction of strongest edges exported by render",
    "out": "output directory",
    "data": "dataset manifest (default <out>/data/manifest.json)",
    "checkpoint": "checkpoint file (default <out>/checkpoint.sfcg)",
    "resume": "continue training from the checkpoint",
    "threads": "BLAS threads (0 = library default; env SFCGAN_THREADS)",
}


def _parse_bool(v: str) -> bool:
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {v!r}")


def _widths(s) -> tuple[int, int]:
    parts = s if isinstance(s, (list, tuple)) else str(s).split(",")
    try:
        w = tuple(int(p) for p in parts)
    except ValueError:
        raise ValidationError(f"widths must be two integers, got {s!r}") from None
    if len(w) != 2 or min(w) < 1:
        raise ValidationError(f"widths must be two positive integers, got {s!r}")
    return w


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sfcgan", description="FC <-> SC connectome translation toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    defaults = RunConfig()
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON file of settings (keys as below, underscores)")
        p.add_argument("--no-sp", dest="sp_enabled", action="store_false", default=argparse.SUPPRESS,
                       help="disable the structure-preserving term")
        for f in fields(RunConfig):
            default = getattr(defaults, f.name)
            flag = "--" + f.name.replace("_", "-")
            kw = {"dest": f.name, "default": argparse.SUPPRESS,
                  "help": f"{HELP[f.name]} (default: {default!r})"}
            if f.type in (bool, "bool"):
                kw.update(type=_parse_bool, metavar="BOOL")
            elif f.name in ("sp_pairing",):
                kw.update(choices=("literal", "paired"))
            elif f.name in ("pcc_rows",):
                kw.update(choices=("mean", "sum"))
            elif f.name.endswith("threshold_mode"):
                kw.update(choices=("absolute", "proportional"))
            else:
                kw["type"] = type(default)
            p.add_argument(flag, **kw)
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    known = {f.name: f for f in fields(RunConfig)}
    if getattr(ns, "config", None):
        try:
            raw = json.loads(Path(ns.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in raw.items():
            want = type(getattr(RunConfig(), k))
            if k in ("widths", "disc_widths") and isinstance(v, list):
                v = ",".join(str(x) for x in v)
            if want is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, want) or (want is int and isinstance(v, bool)):
                raise ValidationError(f"config key {k!r} must be {want.__name__}, got {type(v).__name__}")
            values[k] = v
    for k in known:
        if hasattr(ns, k):
            values[k] = getattr(ns, k)
    cfg = RunConfig(**values)
    if cfg.threads == 0 and "threads" not in values and os.environ.get("SFCGAN_THREADS"):
        try:
            cfg.threads = int(os.environ["SFCGAN_THREADS"])
        except ValueError:
            raise ValidationError("SFCGAN_THREADS must be an integer") from None
    if cfg.threads < 0:
        raise ValidationError("threads must be >= 0")
    return cfg


# -- stages -------------------------------------------------------------------

def _synth(cfg: RunConfig) -> int:
    from .synth import SynthConfig, gen_dataset
    sc = SynthConfig(n=cfg.n, modules=cfg.modules, subjects_per_class=cfg.subjects_per_class, classes=cfg.classes,
                     noise_std=cfg.noise_std, alpha=cfg.alpha, beta=cfg.beta, seed=cfg.seed, sc_max=cfg.sc_max,
                     test_fraction=cfg.test_fraction)
    man = gen_dataset(sc, cfg.data_manifest().parent)
    print(f"wrote {len(man.subjects)} subjects to {man.path}")
    return 0


def train_config(cfg: RunConfig):
    from .losses import LossWeights
    from .trainer import TrainConfig
    weights = LossWeights(cfg.lambda_adv, cfg.lambda_cyc, cfg.lambda_id, cfg.lambda_sp, cfg.sp_enabled,
                          cfg.sp_pairing, cfg.pcc_rows)
    return TrainConfig(epochs=cfg.epochs, lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size,
                       seed=cfg.seed, replay_buffer_size=cfg.replay_buffer_size,
                       checkpoint_every=cfg.checkpoint_every, widths=_widths(cfg.widths),
                       disc_widths=_widths(cfg.disc_widths), weights=weights)


def _train(cfg: RunConfig) -> int:
    from .model import load_checkpoint, save_checkpoint
    from .trainer import resume, train
    man = load_manifest(cfg.data_manifest())
    tc = train_config(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ck_path = cfg.checkpoint_path()
    log_path = out / "train_log.csv"
    if cfg.resume:
        ck = load_checkpoint(ck_path, expected_n=man.n)
        ck, hist = resume(ck, man, tc, log_path=log_path, checkpoint_dir=out)
    else:
        ck, hist = train(man, tc, log_path=log_path, checkpoint_dir=out)
    save_checkpoint(ck, ck_path)
    last = hist[-1]
    print(f"epoch {ck.epoch}: cyc={last['cyc']:.4f} total={last['total']:.4f}; checkpoint {ck_path}")
    return 0


def _load_models(cfg: RunConfig, n: int):
    from .model import load_checkpoint
    return load_checkpoint(cfg.checkpoint_path(), expected_n=n).models


def _translate(cfg: RunConfig) -> int:
    man = load_manifest(cfg.data_manifest())
    models = _load_models(cfg, man.n)
    out = Path(cfg.out) / "translated"
    (out / "fc").mkdir(parents=True, exist_ok=True)
    (out / "sc").mkdir(parents=True, exist_ok=True)
    subjects = man.split("test")
    for s in subjects:
        fc, sc = man.load_pair(s)
        save_connectome(models.g_fc.translate(sc), out / "fc" / f"{s.id}.csv")
        save_connectome(models.g_sc.translate(fc), out / "sc" / f"{s.id}.csv")
    print(f"translated {len(subjects)} test subjects into {out}")
    return 0


def _eval(cfg: RunConfig) -> int:
    from .evaluate import ThresholdConfig, checkpoint_translators, evaluate_dataset, write_report
    man = load_manifest(cfg.data_manifest())
    models = _load_models(cfg, man.n)
    th = ThresholdConfig(cfg.fc_threshold_mode, cfg.fc_threshold, cfg.sc_threshold_mode, cfg.sc_threshold)
    report = evaluate_dataset(man, checkpoint_translators(models), th)
    path = Path(cfg.out) / "report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, path)
    for direction, summary in report.summary().items():
        print(f"translated {direction}: " + ", ".join(f"{k} {v}" for k, v in summary.items()))
    if report.ssim_global:
        print("note: n < 11, SSIM used a single global window")
    for sid, d, msg in report.failures:
        print(f"failed {sid} {d}: {msg}", file=sys.stderr)
    return 0


def _classify(cfg: RunConfig) -> int:
    from .classify import Source, run_study, write_metrics
    from .evaluate import checkpoint_translators
    man = load_manifest(cfg.data_manifest())
    translators = None
    sources = [s for s in Source if s.value.startswith("real")]
    if cfg.checkpoint_path().exists():
        translators = checkpoint_translators(_load_models(cfg, man.n))
        sources = list(Source)
    results = run_study(man, translators, sources, cfg.svm_c)
    path = Path(cfg.out) / "classification.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_metrics(results, man.path.parent.name if man.path else "dataset", path)
    for src, m in results.items():
        print(f"{src.label}: accuracy {m.accuracy:.2f} auc {m.auc:.2f}")
    return 0


def heatmap_pixels(c: Connectome) -> np.ndarray:
    """Linear map of the domain range to 0..255 with floor((v - lo) / (hi - lo) * 255.999)."""
    lo, hi = c.domain.value_range
    v = np.asarray(c.values, dtype=np.float64)
    return np.clip(np.floor((v - lo) / (hi - lo) * 255.999), 0, 255).astype(np.uint8)


def render_heatmap(c: Connectome, path: str | Path) -> None:
    px = heatmap_pixels(c)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{c.n} {c.n}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def write_edge_list(c: Connectome, fraction: float, path: str | Path) -> int:
    edges = top_edges(c, fraction)
    with open(path, "w") as fh:
        fh.write("i,j,weight\n")
        for i, j, w in edges:
            fh.write(f"{i},{j},{w!r}\n")
    return len(edges)


def _render(cfg: RunConfig) -> int:
    if not 0 < cfg.top <= 1:
        raise ValidationError(f"--top must be in (0, 1], got {cfg.top}")
    man = load_manifest(cfg.data_manifest())
    models = _load_models(cfg, man.n) if cfg.checkpoint_path().exists() else None
    out = Path(cfg.out) / "render"
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for s in man.split("test"):
        fc, sc = man.load_pair(s)
        items = [("fc_real", fc), ("sc_real", sc)]
        if models is not None:
            items += [("fc_translated", models.g_fc.translate(sc)), ("sc_translated", models.g_sc.translate(fc))]
        for tag, c in items:
            render_heatmap(c, out / f"{s.id}_{tag}.pgm")
            write_edge_list(c, cfg.top, out / f"{s.id}_{tag}_edges.csv")
            count += 1
    k = math.floor(cfg.top * man.n * (man.n - 1) / 2 + 1e-9)
    print(f"rendered {count} matrices into {out} ({k} edges each)")
    return 0


STAGES = {"synth": _synth, "train": _train, "translate": _translate, "eval": _eval, "classify": _classify,
          "render": _render}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            raise ValidationError("missing subcommand")
        cfg = resolve_config(ns)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if cfg.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=cfg.threads):
                return STAGES[ns.command](cfg)
        return STAGES[ns.command](cfg)
    except (ValidationError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
