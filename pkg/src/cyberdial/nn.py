"""Parameter storage, initialization, the RMS optimizer and checkpoints.

A ``ParamStore`` owns named float64 tensors wrapped as autodiff ``Value``
leaves plus one squared-gradient accumulator per tensor.  Checkpoints are
``.npz`` containers; arrays round-trip bit-exactly and a JSON header keeps
the run metadata (scenario, algorithm, dims, step count).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .autodiff import Value, affine, gru_cell

CHECKPOINT_VERSION = 1

RMS_DECAY = 0.99
RMS_EPS = 1e-8


class ParamStore:
    """Named parameter tensors with per-tensor optimizer state."""

    def __init__(self):
        self.params: dict[str, Value] = {}
        self.opt_state: dict[str, np.ndarray] = {}

    def add(self, name: str, data: np.ndarray) -> Value:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        v = Value(np.asarray(data, dtype=np.float64))
        self.params[name] = v
        self.opt_state[name] = np.zeros_like(v.data)
        return v

    def __getitem__(self, name: str) -> Value:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for v in self.params.values():
            v.zero_grad()

    def grad_global_norm(self) -> float:
        total = 0.0
        for v in self.params.values():
            if v.grad is not None:
                total += float(np.sum(v.grad * v.grad))
        return math.sqrt(total)

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so their global norm is at most ``max_norm``."""
        norm = self.grad_global_norm()
        if norm > max_norm and norm > 0.0:
            factor = max_norm / norm
            for v in self.params.values():
                if v.grad is not None:
                    v.grad *= factor
        return norm

    def rms_step(self, lr: float, decay: float = RMS_DECAY, eps: float = RMS_EPS) -> None:
        """One adaptive update per parameter; gradient buffers are zeroed after."""
        for name, v in self.params.items():
            if v.grad is None:
                continue
            s = self.opt_state[name]
            s *= decay
            s += (1.0 - decay) * v.grad * v.grad
            v.data -= lr * v.grad / (np.sqrt(s) + eps)
        self.zero_grads()

    def copy_from(self, other: "ParamStore") -> None:
        """Bitwise copy of another store's parameters (target-network update)."""
        if set(self.params) != set(other.params):
            raise ValueError("parameter stores have different names")
        for name, v in self.params.items():
            np.copyto(v.data, other.params[name].data)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self.params.items():
            out.add(name, v.data.copy())
            np.copyto(out.opt_state[name], self.opt_state[name])
        return out

    def state_hash(self) -> str:
        """SHA-256 over all parameter bytes, in name order."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_affine(store: ParamStore, prefix: str, n_in: int, n_out: int,
                rng: np.random.Generator) -> tuple[Value, Value]:
    """Uniform fan-in init for weight and bias."""
    bound = 1.0 / math.sqrt(n_in)
    w = store.add(prefix + ".w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    b = store.add(prefix + ".b", rng.uniform(-bound, bound, size=(n_out,)))
    return w, b


def init_embedding(store: ParamStore, name: str, rows: int, dim: int,
                   rng: np.random.Generator, scale: float = 0.08) -> Value:
    return store.add(name, rng.uniform(-scale, scale, size=(rows, dim)))


class AffineLayer:
    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.w, self.b = init_affine(store, prefix, n_in, n_out, rng)

    def __call__(self, x: Value) -> Value:
        return affine(x, self.w, self.b)


class GRULayer:
    """Parameters for one GRU cell: fused [reset|update|candidate] gates."""

    def __init__(self, store: ParamStore, prefix: str, n_in: int, hidden: int,
                 rng: np.random.Generator):
        self.hidden = hidden
        bound_i = 1.0 / math.sqrt(n_in)
        bound_h = 1.0 / math.sqrt(hidden)
        self.w_i = store.add(prefix + ".w_i", rng.uniform(-bound_i, bound_i, (n_in, 3 * hidden)))
        self.w_h = store.add(prefix + ".w_h", rng.uniform(-bound_h, bound_h, (hidden, 3 * hidden)))
        self.b_i = store.add(prefix + ".b_i", rng.uniform(-bound_i, bound_i, (3 * hidden,)))
        self.b_h = store.add(prefix + ".b_h", rng.uniform(-bound_h, bound_h, (3 * hidden,)))

    def __call__(self, x: Value, h: Value) -> Value:
        return gru_cell(x, h, self.w_i, self.w_h, self.b_i, self.b_h)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, store: ParamStore, header: dict) -> None:
    """Versioned binary container: parameters, optimizer state, JSON header."""
    payload: dict[str, np.ndarray] = {}
    for name, v in store.params.items():
        payload["param/" + name] = v.data
        payload["rms/" + name] = store.opt_state[name]
    full_header = dict(header)
    full_header["checkpoint_version"] = CHECKPOINT_VERSION
    payload["__header__"] = np.array(json.dumps(full_header, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    with np.load(path, allow_pickle=False) as npz:
        header = json.loads(str(npz["__header__"][()]))
        if header.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version: {header.get('checkpoint_version')}")
        store = ParamStore()
        for key in npz.files:
            if key.startswith("param/"):
                name = key[len("param/"):]
                store.add(name, npz[key])
                np.copyto(store.opt_state[name], npz["rms/" + name])
    return store, header
