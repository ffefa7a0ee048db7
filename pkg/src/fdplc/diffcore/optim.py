import numpy as np

from ..errors import ConfigError, GradError


class Adam:
    """Adam with bias correction and an optional per-epoch learning-rate decay.

    The learning rate after ``e`` completed epochs is ``base_lr * lr_decay_per_epoch ** e``.
    """

    def __init__(self, named_params, lr=4e-4, betas=(0.9, 0.999), eps=1e-8, lr_decay_per_epoch=1.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(named_params)
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.lr_decay_per_epoch = lr_decay_per_epoch
        self.epoch = 0
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    @property
    def lr(self):
        return self.base_lr * self.lr_decay_per_epoch ** self.epoch

    def end_epoch(self):
        self.epoch += 1

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        # validate everything first so a bad gradient leaves all parameters untouched
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise GradError(f"non-finite gradient for parameter {name}", parameter=name)
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        lr = self.lr
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)

    def state_dict(self):
        state = {"step_count": self.step_count, "epoch": self.epoch}
        for name, _ in self.params:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total
