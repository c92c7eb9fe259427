"""The four translation networks and the versioned checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import engine as E
from .connectome import Connectome, Domain, ValidationError

DEFAULT_WIDTHS = (16, 32)
DEFAULT_DISC_WIDTHS = (16, 32)
LEAK = 0.2

MAGIC = b"SFCG"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or does not match the requested model."""


def _half(n: int) -> int:
    # 3x3 kernel, stride 2, pad 1
    return (n - 1) // 2 + 1


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: float, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Generator:
    """Encoder-decoder mapping one connectome domain to the other.

    Output passes through tanh (FC) or sigmoid (SC), then ``(X + X^T) / 2``
    and the diagonal rule, so symmetry and range hold for any weights.
    """

    def __init__(self, target: Domain, n: int, widths=DEFAULT_WIDTHS, params: E.ParamSet | None = None):
        self.target = Domain.parse(target)
        self.source = self.target.other
        self.n = n
        self.widths = tuple(widths)
        self.params = params if params is not None else E.ParamSet()
        self.half = _half(n)
        eye = np.eye(n)
        self._offdiag = 1.0 - eye
        self._diag = eye if self.target is Domain.FC else np.zeros_like(eye)

    @staticmethod
    def shapes(widths) -> dict[str, tuple]:
        w1, w2 = widths
        return {
            "enc1.w": (w1, 1, 3, 3), "enc1.b": (w1,),
            "enc2.w": (w2, w1, 3, 3), "enc2.b": (w2,),
            "mid.w": (w2, w2, 3, 3), "mid.b": (w2,),
            "dec.w": (w2, w1, 4, 4), "dec.b": (w1,),
            "out.w": (1, w1, 3, 3), "out.b": (1,),
        }

    def init(self, rng: np.random.Generator, dtype=np.float32) -> "Generator":
        for name, shape in self.shapes(self.widths).items():
            if name.endswith(".b"):
                self.params.add(name, np.zeros(shape, dtype=dtype))
            elif name == "dec.w":
                self.params.add(name, _uniform(rng, shape, shape[0] * 16 / 4, dtype))
            else:
                self.params.add(name, _uniform(rng, shape, np.prod(shape[1:]), dtype))
        return self

    def __call__(self, x: E.Tensor) -> E.Tensor:
        """Map a (B, n, n) batch to a (B, n, n) batch in the target domain."""
        p = self.params
        nb = x.shape[0]
        h = E.reshape(E.as_tensor(x), (nb, 1, self.n, self.n))
        h = E.leaky_relu(E.conv2d(h, p["enc1.w"], 1, 1, p["enc1.b"]), LEAK)
        h = E.leaky_relu(E.conv2d(h, p["enc2.w"], 2, 1, p["enc2.b"]), LEAK)
        h = E.leaky_relu(E.conv2d(h, p["mid.w"], 1, 1, p["mid.b"]), LEAK)
        h = E.leaky_relu(E.conv_transpose2d(h, p["dec.w"], 2, 1, p["dec.b"]), LEAK)
        if h.shape[-1] != self.n:
            # odd n: the decoder overshoots by one row/column
            h = h[:, :, : self.n, : self.n]
        h = E.conv2d(h, p["out.w"], 1, 1, p["out.b"])
        h = E.reshape(h, (nb, self.n, self.n))
        h = E.tanh(h) if self.target is Domain.FC else E.sigmoid(h)
        h = (h + E.transpose(h, (0, 2, 1))) * 0.5
        dt = h.dtype
        return h * self._offdiag.astype(dt) + self._diag.astype(dt)

    def translate(self, x: Connectome) -> Connectome:
        if x.domain is not self.source:
            raise ValidationError(f"generator for {self.target.value} expects {self.source.value} input, got {x.domain.value}")
        if x.n != self.n:
            raise ValidationError(f"generator built for n={self.n}, got n={x.n}")
        dtype = next(iter(self.params.values())).dtype
        with E.no_grad():
            out = self(E.Tensor(x.values[None].astype(dtype))).data[0]
        return Connectome(out.astype(np.float64), self.target, x.subject_id, x.label)


class Discriminator:
    """Strided conv stack with a dense sigmoid head; one probability per matrix."""

    def __init__(self, source: Domain, n: int, widths=DEFAULT_DISC_WIDTHS, params: E.ParamSet | None = None):
        self.source = Domain.parse(source)
        self.n = n
        self.widths = tuple(widths)
        self.params = params if params is not None else E.ParamSet()
        self.flat = widths[1] * _half(_half(n)) ** 2

    @staticmethod
    def shapes(n: int, widths) -> dict[str, tuple]:
        w1, w2 = widths
        return {
            "c1.w": (w1, 1, 3, 3), "c1.b": (w1,),
            "c2.w": (w2, w1, 3, 3), "c2.b": (w2,),
            "fc.w": (w2 * _half(_half(n)) ** 2, 1), "fc.b": (1,),
        }

    def init(self, rng: np.random.Generator, dtype=np.float32) -> "Discriminator":
        for name, shape in self.shapes(self.n, self.widths).items():
            if name.endswith(".b"):
                self.params.add(name, np.zeros(shape, dtype=dtype))
            elif name == "fc.w":
                self.params.add(name, _uniform(rng, shape, shape[0], dtype))
            else:
                self.params.add(name, _uniform(rng, shape, np.prod(shape[1:]), dtype))
        return self

    def __call__(self, x: E.Tensor) -> E.Tensor:
        """(B, n, n) batch to (B,) probabilities."""
        p = self.params
        nb = x.shape[0]
        h = E.reshape(E.as_tensor(x), (nb, 1, self.n, self.n))
        h = E.leaky_relu(E.conv2d(h, p["c1.w"], 2, 1, p["c1.b"]), LEAK)
        h = E.leaky_relu(E.conv2d(h, p["c2.w"], 2, 1, p["c2.b"]), LEAK)
        h = E.reshape(h, (nb, self.flat))
        return E.reshape(E.sigmoid(E.dense(h, p["fc.w"], p["fc.b"])), (nb,))

    def discriminate(self, x: Connectome) -> float:
        if x.domain is not self.source:
            raise ValidationError(f"discriminator for {self.source.value} got {x.domain.value} input")
        if x.n != self.n:
            raise ValidationError(f"discriminator built for n={self.n}, got n={x.n}")
        dtype = next(iter(self.params.values())).dtype
        with E.no_grad():
            return float(self(E.Tensor(x.values[None].astype(dtype))).data[0])


@dataclass
class Models:
    g_fc: Generator
    g_sc: Generator
    d_fc: Discriminator
    d_sc: Discriminator

    def generator_params(self) -> E.ParamSet:
        return E.ParamSet({**self.g_fc.params.prefixed("g_fc."), **self.g_sc.params.prefixed("g_sc.")})

    def discriminator_params(self) -> E.ParamSet:
        return E.ParamSet({**self.d_fc.params.prefixed("d_fc."), **self.d_sc.params.prefixed("d_sc.")})

    def all_params(self) -> dict[str, E.Tensor]:
        return {**self.generator_params(), **self.discriminator_params()}

    def generator_for(self, target: Domain) -> Generator:
        return self.g_fc if Domain.parse(target) is Domain.FC else self.g_sc


def init_models(n: int, widths=DEFAULT_WIDTHS, seed: int = 0, disc_widths=DEFAULT_DISC_WIDTHS,
                dtype=np.float32) -> Models:
    """Seeded He-uniform initialization of G_FC, G_SC, D_FC, D_SC."""
    if not isinstance(n, (int, np.integer)) or n < 8:
        raise ValidationError(f"n must be an integer >= 8 for two stride-2 stages, got {n}")
    if len(widths) != 2 or min(widths) < 1 or len(disc_widths) != 2 or min(disc_widths) < 1:
        raise ValidationError("widths must be two positive channel counts")
    rngs = [np.random.default_rng([seed, k]) for k in range(4)]
    return Models(
        g_fc=Generator(Domain.FC, n, widths).init(rngs[0], dtype),
        g_sc=Generator(Domain.SC, n, widths).init(rngs[1], dtype),
        d_fc=Discriminator(Domain.FC, n, disc_widths).init(rngs[2], dtype),
        d_sc=Discriminator(Domain.SC, n, disc_widths).init(rngs[3], dtype),
    )


def models_from_params(n: int, widths, disc_widths, tensors: dict[str, np.ndarray]) -> Models:
    def pset(prefix: str, shapes: dict[str, tuple]) -> E.ParamSet:
        ps = E.ParamSet()
        for name, shape in shapes.items():
            key = f"{prefix}{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint lacks tensor {key!r}")
            if tuple(tensors[key].shape) != tuple(shape):
                raise CheckpointError(f"tensor {key!r} has shape {tensors[key].shape}, model expects {shape}")
            ps.add(name, tensors[key])
        return ps

    gs, ds = Generator.shapes(widths), Discriminator.shapes(n, disc_widths)
    return Models(
        g_fc=Generator(Domain.FC, n, widths, pset("g_fc.", gs)),
        g_sc=Generator(Domain.SC, n, widths, pset("g_sc.", gs)),
        d_fc=Discriminator(Domain.FC, n, disc_widths, pset("d_fc.", ds)),
        d_sc=Discriminator(Domain.SC, n, disc_widths, pset("d_sc.", ds)),
    )


@dataclass
class ModelCheckpoint:
    models: Models
    adam_g: E.AdamState
    adam_d: E.AdamState
    config: dict[str, Any]
    epoch: int = 0
    history: list[dict[str, float]] = field(default_factory=list)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.models.g_fc.n

    @classmethod
    def fresh(cls, models: Models, config: dict[str, Any]) -> "ModelCheckpoint":
        return cls(models, E.AdamState.for_params(models.generator_params()),
                   E.AdamState.for_params(models.discriminator_params()), dict(config))


def _tensor_items(ck: ModelCheckpoint):
    for name, t in ck.models.all_params().items():
        yield f"param/{name}", t.data
    for tag, st in (("adam_g", ck.adam_g), ("adam_d", ck.adam_d)):
        for name in st.m:
            yield f"{tag}/m/{name}", st.m[name]
            yield f"{tag}/v/{name}", st.v[name]
    for name, arr in ck.buffers.items():
        yield f"buffer/{name}", arr


def save_checkpoint(ck: ModelCheckpoint, path: str | Path) -> None:
    table = []
    chunks = []
    offset = 0
    for name, arr in _tensor_items(ck):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    m = ck.models
    header = {
        "n": ck.n,
        "widths": list(m.g_fc.widths),
        "disc_widths": list(m.d_fc.widths),
        "epoch": ck.epoch,
        "adam": {
            tag: {"t": st.t, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps}
            for tag, st in (("adam_g", ck.adam_g), ("adam_d", ck.adam_d))
        },
        "config": ck.config,
        "history": ck.history,
        "payload_bytes": offset,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str | Path, expected_n: int | None = None) -> ModelCheckpoint:
    """Read a checkpoint; float32 payloads come back bit-for-bit."""
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an SFCG checkpoint (bad magic)")
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    if len(blob) < 10 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[10:10 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    payload = blob[10 + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {header.get('payload_bytes')} bytes)")
    n = header["n"]
    if expected_n is not None and n != expected_n:
        raise CheckpointError(f"{path}: checkpoint is for n={n}, run expects n={expected_n}")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start, stop = entry["offset"], entry["offset"] + 4 * count
        if start < 0 or stop > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} exceeds payload")
        tensors[entry["name"]] = np.frombuffer(payload[start:stop], dtype="<f4").astype(np.float32).reshape(shape)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    models = models_from_params(n, tuple(header["widths"]), tuple(header["disc_widths"]), params)
    adams = {}
    for tag, group in (("adam_g", models.generator_params()), ("adam_d", models.discriminator_params())):
        meta = header["adam"][tag]
        st = E.AdamState(t=meta["t"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"])
        for name, p in group.items():
            for moment, store in (("m", st.m), ("v", st.v)):
                key = f"{tag}/{moment}/{name}"
                if key not in tensors or tensors[key].shape != p.shape:
                    raise CheckpointError(f"{path}: optimizer tensor {key!r} missing or misshapen")
                store[name] = tensors[key].copy()
        adams[tag] = st
    buffers = {k[len("buffer/"):]: v.copy() for k, v in tensors.items() if k.startswith("buffer/")}
    return ModelCheckpoint(models, adams["adam_g"], adams["adam_d"], header["config"], header["epoch"],
                           header["history"], buffers)
