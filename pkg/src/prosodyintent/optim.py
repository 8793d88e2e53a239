"""Adam optimizer and finite-difference gradient checking."""

import numpy as np

from .autodiff import Tensor, no_grad


class Adam:
    """Standard Adam with bias correction over a name -> Tensor parameter map.

    lr_overrides maps name prefixes to learning rates; the longest matching
    prefix wins, otherwise the default lr applies.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, lr_overrides=None):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_overrides = dict(lr_overrides or {})
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def _lr_for(self, name: str) -> float:
        best = None
        for prefix, lr in self.lr_overrides.items():
            if name.startswith(prefix) and (best is None or len(prefix) > len(best)):
                best = prefix
        return self.lr if best is None else self.lr_overrides[best]

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self._lr_for(name) * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def grad_check(f, inputs, h: float = 1e-4, max_entries: int | None = None,
               seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    f is a no-argument callable returning a scalar Tensor computed from the
    given input tensors; it is re-run for each perturbation, so it must be
    deterministic. Inputs are promoted to float64 in place. When
    max_entries is set, a seeded random subset of coordinates per input is
    checked instead of every coordinate.
    """
    inputs = list(inputs)
    for t in inputs:
        t.data = t.data.astype(np.float64)
        t.requires_grad = True
        t.grad = None

    out = f()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for t in inputs:
        t.grad = None

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g_ad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            indices = rng.choice(n, size=max_entries, replace=False)
        else:
            indices = range(n)
        for idx in indices:
            orig = flat[idx]
            with no_grad():
                flat[idx] = orig + h
                y_plus = float(f().data)
                flat[idx] = orig - h
                y_minus = float(f().data)
            flat[idx] = orig
            fd = (y_plus - y_minus) / (2.0 * h)
            ad = float(g_ad.reshape(-1)[idx])
            rel = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            worst = max(worst, rel)
    return worst
