"""Parameter containers, standard layers, Adam, and checkpoint I/O."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import DTYPE, Parameter, Tensor, embedding_lookup, layer_norm, linear


class Module:
    """Base class. Parameters and sub-modules are discovered from attributes.

    Attribute order is insertion order, so parameter names and the order
    in which they are visited are stable across runs.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def assign_names(self) -> None:
        """Write the dotted attribute path into every parameter's ``name``."""
        seen: set[int] = set()
        for name, p in self.named_parameters():
            if id(p) in seen:
                continue
            seen.add(id(p))
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ConfigError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data[...] = arr


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def normal_init(rng: np.random.Generator, shape, std: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(uniform_init(rng, d_in, (d_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear expects width {self.weight.shape[0]}, got input {x.shape}")
        return linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.table = Parameter(normal_init(rng, (n, d)))

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self.table, ids)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


# -- optimisation -------------------------------------------------------------
@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Parameters missing from ``grads`` are skipped but keep their moments.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(named_params)
        if len({id(p) for p in self.params.values()}) != len(self.params):
            raise ConfigError("a parameter is registered twice with the optimizer")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        arrays = {n: p.data for n, p in self.params.items()}
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(arrays, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm > 0:
        for g in grads:
            g *= max_norm / total
    return total


# -- checkpoints --------------------------------------------------------------
CHECKPOINT_MAGIC = b"APPFCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], optimizer: AdamState | None = None, seed: int | None = None, extra: dict | None = None) -> None:
    """Write a deterministic binary checkpoint.

    Layout: 8-byte magic, little-endian uint32 version, uint64 header length,
    UTF-8 JSON header (sorted keys), then float64 little-endian payloads in
    header order. Identical inputs give identical bytes.
    """
    entries = []
    blobs = []
    offset = 0

    def push(key: str, arr: np.ndarray) -> None:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": key, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for name in sorted(params):
        push(f"param/{name}", params[name])
    if optimizer is not None:
        for name in sorted(optimizer.m):
            push(f"adam_m/{name}", optimizer.m[name])
            push(f"adam_v/{name}", optimizer.v[name])
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "adam_step": optimizer.step if optimizer is not None else None,
        "extra": extra or {},
        "entries": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], AdamState | None, int | None, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + head_len].decode("utf-8"))
    base = 20 + head_len
    params: dict[str, np.ndarray] = {}
    opt = AdamState(step=header["adam_step"]) if header["adam_step"] is not None else None
    for e in header["entries"]:
        start = base + e["offset"]
        arr = np.frombuffer(raw[start : start + e["nbytes"]], dtype="<f8").reshape(e["shape"]).astype(DTYPE)
        kind, name = e["name"].split("/", 1)
        if kind == "param":
            params[name] = arr
        elif kind == "adam_m":
            opt.m[name] = arr
        elif kind == "adam_v":
            opt.v[name] = arr
    return params, opt, header["seed"], header["extra"]
