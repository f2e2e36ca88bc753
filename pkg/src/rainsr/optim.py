"""Adam over named parameter tensors.

State (first/second moments, step counter) exports to flat float64 arrays
so checkpoints can restore an optimizer bit-exactly; resumed runs then
reproduce the loss curve of an uninterrupted run.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.99, eps=1e-8):
        # params: name -> Tensor, updated in place by step().
        for name, p in params.items():
            if not isinstance(p, Tensor):
                raise TypeError(f"parameter {name!r} is not a Tensor")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads):
        """Apply one update from a name -> gradient array mapping.

        Parameters without an entry (or mapped to None) are skipped.
        """
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{p.data.shape} for {name!r}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        """Flatten state for checkpointing; inverse of load_state_arrays."""
        out = {"opt.t": np.array(float(self.t))}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name].copy()
            out[f"opt.v.{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays):
        if "opt.t" not in arrays:
            raise KeyError("optimizer state missing 'opt.t'")
        self.t = int(arrays["opt.t"])
        for name, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"opt.{slot}.{name}"
                if key not in arrays:
                    raise KeyError(f"optimizer state missing {key!r}")
                arr = np.asarray(arrays[key], dtype=np.float64)
                if arr.shape != p.data.shape:
                    raise ValueError(f"state shape mismatch for {key!r}")
                store[name] = arr.copy()
