"""Two-layer graph convolutional encoder with hand-derived gradients.

The forward map is ``Z = A·relu(A·X·W1 + b1)·W2 + b2`` for a symmetric
normalized propagation matrix ``A``. Everything runs in float64; gradients
are exact reverse-mode derivatives of that fixed computation graph, with the
relu subgradient at 0 taken as 0 so gradient checks are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import spmm


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from different parameter values."""


@dataclass(frozen=True)
class GcnParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    version: int = 0

    def __post_init__(self):
        for t in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(t).all():
                raise ValueError("parameters must be finite")
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[1] != self.b2.shape[0]:
            raise ValueError("bias shapes must match weight output dims")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("layer widths are inconsistent")

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, valid only for the producing params."""

    a_hat: sp.csr_matrix
    x: np.ndarray
    h_pre: np.ndarray
    h_act: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    params_version: int


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: GcnParams) -> "AdamState":
        zeros = {k: np.zeros_like(t) for k, t in params.tensors().items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()})


def init_params(s: int, h: int, k_latent: int, seed: int) -> GcnParams:
    """He-initialized weights (variance 2/fan_in), zero biases."""
    if min(s, h, k_latent) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / s), size=(s, h))
    w2 = rng.normal(0.0, np.sqrt(2.0 / h), size=(h, k_latent))
    return GcnParams(w1=w1, b1=np.zeros(h), w2=w2, b2=np.zeros(k_latent))


def forward(p: GcnParams, a_hat: sp.csr_matrix, x: np.ndarray
            ) -> tuple[np.ndarray, ForwardCache]:
    """Compute latent representations ``Z`` and the backward cache."""
    if x.shape[1] != p.w1.shape[0]:
        raise ValueError(f"feature width {x.shape[1]} != W1 rows {p.w1.shape[0]}")
    if a_hat.shape[0] != x.shape[0]:
        raise ValueError("propagation matrix and features disagree on n")
    h_pre = spmm(a_hat, x @ p.w1) + p.b1
    h_act = np.maximum(h_pre, 0.0)
    z = spmm(a_hat, h_act @ p.w2) + p.b2
    cache = ForwardCache(a_hat=a_hat, x=x, h_pre=h_pre, h_act=h_act,
                         w1=p.w1, w2=p.w2, params_version=p.version)
    return z, cache


def backward(cache: ForwardCache, grad_z: np.ndarray,
             params: GcnParams | None = None,
             want_input_grad: bool = False) -> dict[str, np.ndarray]:
    """Exact gradients of the forward map for the cotangent ``grad_z``.

    When ``params`` is supplied its version is checked against the cache.
    Returns a dict with keys ``w1, b1, w2, b2`` (plus ``x`` on request).
    """
    if params is not None and params.version != cache.params_version:
        raise StaleCacheError(
            f"cache built for params v{cache.params_version}, got v{params.version}")
    if grad_z.shape != (cache.x.shape[0], cache.w2.shape[1]):
        raise ValueError("grad_z shape mismatch")
    a = cache.a_hat
    g2 = spmm(a, grad_z)                    # A^T = A (symmetric normalization)
    grads = {
        "b2": grad_z.sum(axis=0),
        "w2": cache.h_act.T @ g2,
    }
    g1 = (g2 @ cache.w2.T) * (cache.h_pre > 0)
    grads["b1"] = g1.sum(axis=0)
    ax_grad = spmm(a, g1)
    grads["w1"] = cache.x.T @ ax_grad
    if want_input_grad:
        grads["x"] = ax_grad @ cache.w1.T
    return grads


def adam_step(p: GcnParams, grads: dict[str, np.ndarray], st: AdamState,
              lr: float) -> tuple[GcnParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    new_m, new_v, new_t = {}, {}, {}
    t = st.step + 1
    for name, theta in p.tensors().items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient entries in {name}")
        m = st.beta1 * st.m[name] + (1 - st.beta1) * g
        v = st.beta2 * st.v[name] + (1 - st.beta2) * g * g
        m_hat = m / (1 - st.beta1 ** t)
        v_hat = v / (1 - st.beta2 ** t)
        new_m[name], new_v[name] = m, v
        new_t[name] = theta - lr * m_hat / (np.sqrt(v_hat) + st.eps)
    new_state = AdamState(m=new_m, v=new_v, step=t,
                          beta1=st.beta1, beta2=st.beta2, eps=st.eps)
    new_params = GcnParams(w1=new_t["w1"], b1=new_t["b1"], w2=new_t["w2"],
                           b2=new_t["b2"], version=p.version + 1)
    return new_params, new_state
