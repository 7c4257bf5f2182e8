"""Named parameter registry, Adam, and checkpoint serialization."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1


class ParameterStore:
    """Ordered mapping of parameter name to trainable :class:`Tensor`."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.snapshot())

    def frozen(self) -> "ParameterStore":
        """Copy whose tensors do not record gradients."""
        out = self.copy()
        for p in out._params.values():
            p.requires_grad = False
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(str(p.value.shape).encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def n_values(self) -> int:
        return int(np.sum([p.value.size for p in self._params.values()]))


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ParameterStore) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(p.value))
            v = self.v.setdefault(name, np.zeros_like(p.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": {k: _encode_array(a) for k, a in self.m.items()},
            "v": {k: _encode_array(a) for k, a in self.v.items()},
        }

    @classmethod
    def from_state(cls, state: Mapping[str, Any]) -> "Adam":
        return cls(
            lr=state["lr"],
            beta1=state["beta1"],
            beta2=state["beta2"],
            eps=state["eps"],
            step_count=state["step_count"],
            m={k: _decode_array(a) for k, a in state["m"].items()},
            v={k: _decode_array(a) for k, a in state["v"].items()},
        )


def _encode_array(a: np.ndarray) -> dict[str, Any]:
    return {"shape": list(a.shape), "dtype": "float64", "data": a.reshape(-1).tolist()}


def _decode_array(d: Mapping[str, Any]) -> np.ndarray:
    if d.get("dtype", "float64") != "float64":
        raise ValueError(f"unsupported dtype tag {d['dtype']!r}")
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path: str | os.PathLike,
    params: ParameterStore,
    *,
    optimizer: Adam | None = None,
    rng_state: Mapping[str, Any] | None = None,
    step: int = 0,
    extra: Mapping[str, Any] | None = None,
) -> None:
    """Write parameters plus training state as one JSON document (atomically)."""
    doc = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "params": {k: _encode_array(p.value) for k, p in params.items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng_state": rng_state,
        "step": step,
        "extra": dict(extra or {}),
    }
    atomic_write_text(path, json.dumps(doc))


@dataclass
class Checkpoint:
    params: ParameterStore
    optimizer: Adam | None
    rng_state: dict[str, Any] | None
    step: int
    extra: dict[str, Any]


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('checkpoint_version')!r}")
    params = ParameterStore({k: _decode_array(v) for k, v in doc["params"].items()})
    opt = Adam.from_state(doc["optimizer"]) if doc.get("optimizer") else None
    return Checkpoint(params, opt, doc.get("rng_state"), doc.get("step", 0), doc.get("extra", {}))
