"""Fast invariant checks runnable from a fresh install (``alkt selftest``)."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .distill import transfer_loss
from .nets import ArchConfig, build_pair
from .selection import select_top
from .tensor import Tensor
from .uncertainty import KL_EPS, kl_divergence


def _fd_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _max_rel(a, b, floor=1e-6) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradients() -> None:
    rng = np.random.default_rng(0)
    for kind in ("mlp", "cnn"):
        if kind == "mlp":
            arch = ArchConfig("mlp", 2, (5, 4), 3, (3,))
            x = rng.normal(size=(4, 3))
        else:
            arch = ArchConfig("cnn", 2, (2, 3), 3, (1, 5, 5))
            x = rng.normal(size=(2, 1, 5, 5))
        teacher, student = build_pair(arch, 1)
        y = rng.integers(0, 3, size=len(x))
        t_acts = [a.detach() for a in teacher.forward(x).activations]

        def loss():
            out = student.forward(x)
            return T.cross_entropy(T.log_softmax(out.logits), y) + transfer_loss(out.activations, t_acts) * 2.0

        params = student.parameters()
        for p in params:
            p.zero_grad()
        loss().backward()
        for p in params:
            fd = _fd_grad(lambda: loss().item(), p.data)
            err = _max_rel(p.grad, fd)
            if err > 1e-5:
                raise AssertionError(f"{kind}: relative gradient error {err:.2e}")


def check_softmax() -> None:
    z = np.random.default_rng(1).normal(scale=20, size=(6, 5))
    p = T.softmax(Tensor(z)).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0)
    assert np.allclose(T.softmax(Tensor(z + 17.0)).data, p, atol=1e-9, rtol=0)


def check_kl_oracle(eps: float = KL_EPS) -> None:
    a = float(kl_divergence([0.5, 0.5], [0.9, 0.1], eps))
    b = float(kl_divergence([0.9, 0.1], [0.5, 0.5], eps))
    want_a = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    want_b = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    if abs(a - want_a) > 1e-6 or abs(b - want_b) > 1e-6:
        raise AssertionError(f"KL values {a:.6f}, {b:.6f} != {want_a:.6f}, {want_b:.6f}")


def check_transfer_oracle() -> None:
    s = [Tensor([[1.0, 2.0]])]
    t = [Tensor([[2.0, 1.0]])]
    got = transfer_loss(s, t).item()
    want = 3 * math.sqrt(2) / math.sqrt(17)
    if abs(got - want) > 1e-9:
        raise AssertionError(f"transfer loss {got} != {want}")


def check_selection_oracle() -> None:
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        idx = rng.permutation(1000)[:n]
        sc = rng.integers(0, 5, size=n).astype(float)
        m = int(rng.integers(0, n + 1))
        ranked = sorted(zip(idx.tolist(), sc.tolist()), key=lambda t: (-t[1], t[0]))
        want = sorted(i for i, _ in ranked[:m])
        got = select_top(idx, sc, m).tolist()
        if got != want:
            raise AssertionError(f"select_top mismatch: {got} vs {want}")


def check_bound() -> None:
    rng = np.random.default_rng(3)
    for _ in range(500):
        k = int(rng.integers(2, 8))
        pt, ps = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        y = np.eye(k)[rng.integers(k)]
        lhs = np.linalg.norm(pt - y)
        rhs = np.linalg.norm(pt - ps) + np.linalg.norm(ps - y)
        if lhs > rhs + 1e-9:
            raise AssertionError("triangle inequality violated")


def run_selftest(kl_eps: float = KL_EPS) -> dict[str, tuple[bool, str]]:
    checks = {
        "gradient-check": check_gradients,
        "softmax-invariants": check_softmax,
        "kl-oracle": lambda: check_kl_oracle(kl_eps),
        "transfer-loss-oracle": check_transfer_oracle,
        "selection-oracle": check_selection_oracle,
        "bound-check": check_bound,
    }
    results = {}
    for name, fn in checks.items():
        try:
            fn()
            results[name] = (True, "")
        except Exception as exc:  # report every failure, keep going
            results[name] = (False, f"{type(exc).__name__}: {exc}")
    return results
