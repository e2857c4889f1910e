"""Named parameter containers with alias-aware traversal, and batch norm."""
from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from .ops import batch_norm, batch_stats
from .tensor import Tensor, parameter


class Module:
    """Holds parameters and child modules.

    A parameter object reachable by several paths (weight sharing) is reported
    once, under the first name encountered. Buffers are non-trainable arrays
    (running statistics) saved alongside parameters. Modules start in
    evaluation mode; training code switches them with ``train()``.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, "Module"] = {}
        self.training = False

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_buffer(self, name: str, arr: np.ndarray) -> None:
        self._buffers[name] = arr

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def train(self, mode: bool = True) -> "Module":
        for m in self._modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _modules(self, seen=None) -> Iterator["Module"]:
        seen = set() if seen is None else seen
        if id(self) in seen:
            return
        seen.add(id(self))
        yield self
        for child in self._children.values():
            yield from child._modules(seen)

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        seen: set = set()

        def walk(m: "Module", pre: str):
            if id(m) in seen:
                return
            seen.add(id(m))
            for name in m._buffers:
                out[pre + name] = (m, name)
            for name, child in m._children.items():
                walk(child, pre + name + ".")

        walk(self, prefix)
        return out

    def _walk(self, prefix: str, seen: set) -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            if id(p) not in seen:
                seen.add(id(p))
                yield prefix + name, p
        for name, child in self._children.items():
            yield from child._walk(prefix + name + ".", seen)

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return dict(self._walk(prefix, set()))

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: m._buffers[n].copy() for k, (m, n) in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for k, (m, n) in buffers.items():
            arr = np.asarray(state[k])
            if arr.shape != m._buffers[n].shape:
                raise ValueError(f"{k}: shape {arr.shape} != {m._buffers[n].shape}")
            m._buffers[n] = arr.astype(m._buffers[n].dtype, copy=True)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def checksum(self) -> str:
        """Digest of all parameters and buffers."""
        import hashlib
        h = hashlib.sha256()
        for k, arr in sorted(self.state_dict().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


class BatchNorm(Module):
    """Batch normalisation over axis 1 with running statistics.

    In training mode the batch statistics are used and folded into the
    running estimates; in evaluation mode the running estimates are used, so
    the output for a sample never depends on its batch. A
    training batch with a single value per feature also uses the running
    estimates, since its variance is undefined.
    """

    def __init__(self, n_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.n_features = n_features
        self.momentum = momentum
        self.eps = eps
        self.weight = self.add_param("weight", parameter(np.ones(n_features, np.float32)))
        self.bias = self.add_param("bias", parameter(np.zeros(n_features, np.float32)))
        self.add_buffer("running_mean", np.zeros(n_features, np.float64))
        self.add_buffer("running_var", np.ones(n_features, np.float64))

    def forward(self, x: Tensor) -> Tensor:
        per_feature = x.shape[0] * (x.shape[2] * x.shape[3] if x.ndim == 4 else 1)
        if self.training and per_feature > 1:
            mean, var = batch_stats(x)
            m = self.momentum
            self._buffers["running_mean"] = (1 - m) * self._buffers["running_mean"] + m * mean
            self._buffers["running_var"] = (1 - m) * self._buffers["running_var"] + m * var
            return batch_norm(x, self.weight, self.bias, None, self.eps)
        stats = (self._buffers["running_mean"], self._buffers["running_var"])
        return batch_norm(x, self.weight, self.bias, stats, self.eps)
