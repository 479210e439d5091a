"""
Adam optimizer and the linear learning-rate decay.
"""

from dataclasses import dataclass, field

import numpy as np

from overlapgan.errors import NonFiniteError, ShapeError
from overlapgan.tensor import Tensor


@dataclass
class AdamState:
    """
    Per-parameter Adam moments plus the shared step counter.

    ``m`` and ``v`` are keyed by parameter name and always match the
    parameter shapes.
    """

    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], alpha: float, beta1: float, beta2: float,
                   eps: float = 1e-8) -> "AdamState":
        state = cls(alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": {k: {"shape": list(a.shape), "values": a.reshape(-1).tolist()} for k, a in self.m.items()},
            "v": {k: {"shape": list(a.shape), "values": a.reshape(-1).tolist()} for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        def unpack(blob):
            return {k: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for k, e in blob.items()}

        return cls(
            alpha=float(data["alpha"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
            t=int(data["t"]),
            m=unpack(data["m"]),
            v=unpack(data["v"]),
        )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              alpha: float | None = None) -> None:
    """
    One bias-corrected Adam update, in place.

    Args:
        params: Parameters by name.
        grads: Gradients by name; a missing entry counts as zero.
        state: Moments and step counter; ``t`` is incremented.
        alpha: Learning rate for this step (defaults to ``state.alpha``).

    Raises:
        NonFiniteError: If any gradient holds NaN or inf. Nothing is updated.
        ShapeError: If a gradient shape differs from its parameter.
    """
    lr = state.alpha if alpha is None else alpha
    resolved: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step[{name}]", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of {name} is not finite at Adam step {state.t + 1}")
        resolved[name] = g

    state.t += 1
    t = state.t
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = resolved[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_schedule(t: int, alpha0: float, total_iters: int, decay: bool = True) -> float:
    """
    Learning rate at iteration ``t``: ``alpha0 * (1 - t/T)`` clamped at 0.

    With ``decay`` off the rate stays at ``alpha0``, but the arguments are
    still checked.

    Raises:
        ValueError: If ``total_iters`` is not positive or ``t`` is negative.
    """
    if total_iters <= 0:
        raise ValueError("lr_schedule needs total_iters > 0")
    if t < 0:
        raise ValueError(f"iteration must be non-negative, got {t}")
    if not decay:
        return alpha0
    return max(0.0, alpha0 * (1.0 - t / total_iters))
