"""Named parameter storage, initialisation and checkpoint files."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .numerics import NumericError, Tensor


class ParamStore:
    """Owns every learnable tensor under a unique dotted name.

    Initialisation draws from a generator seeded by ``rng_seed`` in the order
    parameters are declared, so equal seeds give bit-identical weights.
    """

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already defined")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def matrix(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-a, a, size=(fan_in, fan_out)))

    def embedding(self, name: str, rows: int, dim: int, std: float = 1.0) -> Tensor:
        # unit scale matches layer-normed activations, so embeddings are not drowned out
        return self.add(name, self.rng.normal(0.0, std, size=(rows, dim)))

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> Tensor:
        return self.add(name, np.ones(shape))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_of(self, name: str) -> np.ndarray:
        g = self._params[name].grad
        return np.zeros_like(self._params[name].data) if g is None else g

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, t in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, store: ParamStore, meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    """Write a JSON key -> shape -> values dump.

    Python's float repr round-trips float64 exactly, so reload is bit-exact.
    """
    def dump(arrs):
        return {k: {"shape": list(v.shape), "values": [float(x) for x in np.ravel(v)]}
                for k, v in arrs.items()}

    doc = {
        "format": "relsql-checkpoint/1",
        "rng_seed": store.rng_seed,
        "params": dump(store.state()),
        "extra": dump(extra or {}),
        "meta": meta or {},
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[int, dict[str, np.ndarray], dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "relsql-checkpoint/1":
        raise ValueError(f"{path}: not a relsql checkpoint")

    def load(d):
        return {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}

    return int(doc["rng_seed"]), load(doc["params"]), load(doc.get("extra", {})), doc.get("meta", {})


# ---------------------------------------------------------------- gradient checking

def grad_check(f: Callable[[], Tensor], params: ParamStore, eps: float = 1e-6,
               names: list[str] | None = None, samples_per_param: int = 8,
               seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must rebuild the scalar loss from the current parameter values on
    each call and be deterministic (evaluation mode).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    params.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names or params.names():
        t = params[name]
        analytic = params.grad_of(name)
        flat = t.data.reshape(-1)
        n = flat.size
        picks = range(n) if n <= samples_per_param else rng.choice(n, samples_per_param, replace=False)
        for k in picks:
            orig = flat[k]
            flat[k] = orig + eps
            up = f().item()
            flat[k] = orig - eps
            down = f().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError("grad_check: non-finite loss under perturbation")
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    params.zero_grad()
    return worst
