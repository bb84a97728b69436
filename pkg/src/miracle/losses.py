"""Reconstruction loss, acyclicity and moment regularizers, and their gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .network import ForwardCache, NetworkParams, backward, column_norms, forward


def expm(a: np.ndarray, tol: float = 1e-16) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a Taylor core.

    The matrix is scaled by 2**-s until its 1-norm is at most 1/2, the
    series is summed until the next term is below ``tol`` relative to the
    partial sum, then squared s times.
    """
    a = np.asarray(a, dtype=float)
    m = a.shape[0]
    if a.shape != (m, m):
        raise ValueError("expm needs a square matrix")
    norm = np.abs(a).sum(axis=0).max() if m else 0.0
    if not np.isfinite(norm):
        raise FloatingPointError("expm of a non-finite matrix")
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    scaled = a / 2.0**s
    result = np.eye(m)
    term = np.eye(m)
    for k in range(1, 60):
        term = term @ scaled / k
        result = result + term
        if np.abs(term).max() <= tol * np.abs(result).max():
            break
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            result = result @ result
    if not np.isfinite(result).all():
        raise FloatingPointError(f"matrix exponential overflowed (1-norm {norm:.3g})")
    return result


def h_of(b: np.ndarray, method: str = "expm") -> float:
    """Acyclicity score tr(exp(B*B)) - m; zero iff the weighted graph has no cycle.

    ``method="poly"`` uses tr((I + B*B/m)^m) - m instead.
    """
    return _h_and_exp(np.asarray(b, dtype=float), method)[0]


def _h_and_exp(b: np.ndarray, method: str = "expm"):
    m = b.shape[0]
    if b.shape != (m, m):
        raise ValueError("h needs a square matrix")
    sq = b * b
    if method == "expm":
        e = expm(sq)
        return float(np.trace(e) - m), e
    if method == "poly":
        inner = np.eye(m) + sq / m
        e = np.linalg.matrix_power(inner, m - 1)
        return float(np.trace(e @ inner) - m), e
    raise ValueError(f"unknown acyclicity method {method!r}")


def dh_db(b: np.ndarray, method: str = "expm") -> tuple[float, np.ndarray]:
    """h(B) and its gradient 2 * exp(B*B)^T * B."""
    h, e = _h_and_exp(b, method)
    return h, 2.0 * e.T * b


@dataclass
class LossBreakdown:
    l1_recon: float
    l1_xent: float
    r1: float
    r2: float
    total: float
    h_value: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainingData:
    """What the losses see: the network input X~(0), observed values and mask.

    ``observed`` holds x where r = 1 and 0 elsewhere.
    """

    inputs: np.ndarray
    observed: np.ndarray
    mask: np.ndarray

    @classmethod
    def build(cls, dataset, inputs: np.ndarray) -> "TrainingData":
        mask = dataset.mask.astype(float)
        observed = np.where(dataset.mask == 1, dataset.values, 0.0)
        return cls(np.asarray(inputs, dtype=float), observed, mask)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def _l1_parts(params, data: TrainingData, imp, prob):
    n = data.n
    resid = (imp - data.observed) * data.mask
    recon = float((resid**2).sum() / n)
    r = data.mask[:, params.missing]
    xent = float(-(r * np.log(prob) + (1 - r) * np.log1p(-prob)).sum() / n)
    d_imp = 2.0 * resid / n
    d_prob = (-r / prob + (1 - r) / (1 - prob)) / n
    return recon, xent, d_imp, d_prob


def _r2_parts(params, data: TrainingData, imp, prob):
    n = data.n
    s = params.missing
    r = data.mask[:, s]
    x = data.observed[:, s]
    e = 1.0 / prob
    wsum = (e * r).sum(axis=0)
    tau_sipw = (e * r * x).sum(axis=0) / wsum
    tau_mean = imp[:, s].mean(axis=0)
    diff = tau_sipw - tau_mean
    d_imp = np.zeros_like(imp)
    d_imp[:, s] = -2.0 * diff / n
    d_prob = 2.0 * diff * r * (x - tau_sipw) / wsum * (-(e**2))
    return float((diff**2).sum()), d_imp, d_prob


def _r1_parts(params, method="expm"):
    norms = column_norms(params)  # (heads, d)
    size = params.n_heads
    b = np.zeros((size, size))
    b[: params.d, :] = norms.T
    h, g_b = dh_db(b, method)
    r1 = 0.5 * h * h + h
    coef = (h + 1.0) * g_b[: params.d, :].T  # (heads, d)
    safe = np.where(norms > 0, norms, 1.0)
    coef = np.where(norms > 0, coef / safe, 0.0)
    g_w = params.tensors["w_in"] * coef[:, None, :]
    return r1, h, g_w


def loss_l1(params: NetworkParams, data: TrainingData) -> float:
    imp, prob = forward(params, data.inputs)
    recon, xent, _, _ = _l1_parts(params, data, imp, prob)
    return recon + xent


def loss_r1(params: NetworkParams, method: str = "expm") -> float:
    return _r1_parts(params, method)[0]


def loss_r2(params: NetworkParams, data: TrainingData) -> float:
    imp, prob = forward(params, data.inputs)
    return _r2_parts(params, data, imp, prob)[0]


def total_loss_and_grad(
    params: NetworkParams,
    data: TrainingData,
    beta1: float = 0.1,
    beta2: float = 1.0,
    use_l1: bool = True,
    use_r1: bool = True,
    use_r2: bool = True,
    acyclicity: str = "expm",
    fc: ForwardCache | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """L = L1 + beta1 * R1 + beta2 * R2 and its exact gradient.

    A disabled term is still reported in the breakdown but contributes
    neither to ``total`` nor to the gradient.
    """
    if beta1 < 0 or beta2 < 0:
        raise ValueError("regularization weights must be >= 0")
    fc = fc or forward(params, data.inputs, cache=True)
    recon, xent, d_imp, d_prob = _l1_parts(params, data, fc.imp, fc.prob)
    r2, d_imp2, d_prob2 = _r2_parts(params, data, fc.imp, fc.prob)
    r1, h, g_r1 = _r1_parts(params, acyclicity)

    w1 = 1.0 if use_l1 else 0.0
    w2 = beta2 if use_r2 else 0.0
    w_r1 = beta1 if use_r1 else 0.0
    # overflow is reported below as a named term, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        grads = backward(params, fc, w1 * d_imp + w2 * d_imp2, w1 * d_prob + w2 * d_prob2)
        grads["w_in"] = grads["w_in"] + w_r1 * g_r1
        total = w1 * (recon + xent) + w_r1 * r1 + w2 * r2
    if not np.isfinite(total):
        terms = (("L1", w1 * (recon + xent)), ("R1", w_r1 * r1), ("R2", w2 * r2))
        bad = [k for k, v in terms if not np.isfinite(v)]
        raise FloatingPointError(f"non-finite loss term {bad[0] if bad else 'total'}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    return LossBreakdown(recon, xent, r1, r2, total, h), grads



def loss_terms(params: NetworkParams, data: TrainingData, acyclicity: str = "expm") -> tuple[float, float, float]:
    """(L1, R1, R2) from a single forward pass."""
    imp, prob = forward(params, data.inputs)
    recon, xent, _, _ = _l1_parts(params, data, imp, prob)
    return recon + xent, _r1_parts(params, acyclicity)[0], _r2_parts(params, data, imp, prob)[0]


def total_loss(params: NetworkParams, data: TrainingData, beta1: float = 0.1, beta2: float = 1.0,
               use_l1: bool = True, use_r1: bool = True, use_r2: bool = True, acyclicity: str = "expm") -> float:
    """The objective value alone, with the same term switches as :func:`total_loss_and_grad`."""
    l1, r1, r2 = loss_terms(params, data, acyclicity)
    return (l1 if use_l1 else 0.0) + (beta1 * r1 if use_r1 else 0.0) + (beta2 * r2 if use_r2 else 0.0)
