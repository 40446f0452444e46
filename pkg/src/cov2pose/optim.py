"""Mixed-geometry optimization: Stiefel projected gradient + QR retraction for
BiMap weights, Adam for Euclidean parameters, and a plateau LR scheduler."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .linalg import qr_reduced, sym


def stiefel_project_gradient(W, G):
    """Tangent component ``G - W sym(W^T G)`` at ``W``."""
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if W.shape != G.shape:
        raise InvalidInput(f"gradient shape {G.shape} does not match weight {W.shape}")
    return G - W @ sym(W.T @ G)


def stiefel_step(W, G, eta):
    """Step along the negative tangent gradient, then retract with the Q factor.

    ``eta == 0`` returns ``W`` unchanged (bit for bit) instead of re-factoring it.
    """
    if eta == 0:
        return np.array(W, dtype=np.float64)
    Q, _ = qr_reduced(W - eta * stiefel_project_gradient(W, G))
    return Q


def init_stiefel(n, m, seed):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if m > n:
        raise InvalidInput("Stiefel point needs m <= n")
    Q, _ = qr_reduced(rng.standard_normal((n, m)))
    return Q


@dataclass
class StiefelOptState:
    lr: float = 1e-2

    def __post_init__(self):
        # zero freezes the group; negative rates are always a mistake
        if not self.lr >= 0:
            raise InvalidInput("learning rate must be non-negative")

    def step(self, params, grads, names):
        for name in names:
            params[name] = stiefel_step(params[name], grads[name], self.lr)

    def state_dict(self):
        return {"lr": self.lr}

    def load_state_dict(self, state):
        self.lr = float(state["lr"])


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr >= 0:
            raise InvalidInput("learning rate must be non-negative")

    def step(self, params, grads, names):
        """Bias-corrected Adam update of ``params[name]`` in place of the dict entry."""
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name in names:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": dict(self.m),
            "v": dict(self.v),
        }

    def load_state_dict(self, state):
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.step_count = int(state["step_count"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


def adam_step(state, params, grads):
    """Functional wrapper: update every entry of ``grads``."""
    state.step(params, grads, sorted(grads))
    return params


@dataclass
class PlateauScheduler:
    """Halve the learning rates after ``patience`` epochs without a strictly
    lower validation loss (improvement must exceed ``min_delta``)."""

    factor: float = 0.5
    patience: int = 4
    min_delta: float = 0.0
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, val_loss, optimizers):
        if val_loss < self.best - self.min_delta:
            self.best = float(val_loss)
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            for opt in optimizers:
                opt.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False

    def state_dict(self):
        return {
            "factor": self.factor,
            "patience": self.patience,
            "min_delta": self.min_delta,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
        }

    def load_state_dict(self, state):
        self.factor = float(state["factor"])
        self.patience = int(state["patience"])
        self.min_delta = float(state["min_delta"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])


def scheduler_step(scheduler, val_loss, lrs):
    """Functional form on a plain list of learning rates."""

    class _Box:
        def __init__(self, lr):
            self.lr = lr

    boxes = [_Box(lr) for lr in lrs]
    scheduler.step(val_loss, boxes)
    return [b.lr for b in boxes]
