"""Adam optimizer with bias correction."""
from __future__ import annotations

import numpy as np

from .tensor import GraphError, Tensor, check_finite


class Adam:
    """Adam over a fixed list of named parameters.

    Keeps first/second moment estimates per parameter and a shared step
    counter. ``step`` reads each parameter's ``grad`` and updates ``data``
    in place; it refuses to run if any parameter is missing a gradient,
    which catches wiring mistakes in the alternating training phases.
    """

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        missing = [name for name, p in self.params if p.grad is None]
        if missing:
            raise GraphError(f"Adam.step: parameters without gradients: {missing[:4]}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            check_finite(g, f"Adam.step gradient of {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Moment arrays plus the step counter, in a stable order."""
        out: list[tuple[str, np.ndarray]] = []
        for name, _ in self.params:
            out.append((f"{name}.m", self.m[name]))
            out.append((f"{name}.v", self.v[name]))
        out.append(("t", np.asarray([float(self.t)], dtype=np.float32)))
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.params:
            self.m[name] = np.asarray(tensors[f"{name}.m"], dtype=p.data.dtype).reshape(p.data.shape)
            self.v[name] = np.asarray(tensors[f"{name}.v"], dtype=p.data.dtype).reshape(p.data.shape)
        self.t = int(tensors["t"].reshape(()))
