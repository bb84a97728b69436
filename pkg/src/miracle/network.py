"""Two-headed network: per-feature imputation heads and missingness heads.

Every head c owns an input layer ``w_in[c]`` (h x d) and an output row
``w_out[c]`` (h,); all heads share the hidden layers. Heads 0..d-1 predict
the features, heads d..d+d_S-1 the observation probabilities of the
incomplete features. Input column j of imputation head j, and input column
S[m] of missingness head m, are pinned to zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import elu_fused

PROB_EPS = 1e-6


@dataclass
class NetworkParams:
    d: int
    missing: np.ndarray  # the set S, ascending column indices
    hidden: int
    depth: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def d_s(self) -> int:
        return len(self.missing)

    @property
    def n_heads(self) -> int:
        return self.d + self.d_s

    @property
    def n_shared(self) -> int:
        return self.depth - 2

    @property
    def w_imp_in(self) -> np.ndarray:
        return self.tensors["w_in"][: self.d]

    @property
    def w_miss_in(self) -> np.ndarray:
        return self.tensors["w_in"][self.d :]

    def input_mask(self) -> np.ndarray:
        """(heads, d) array with 0 on the pinned input columns, 1 elsewhere."""
        mask = np.ones((self.n_heads, self.d))
        mask[np.arange(self.d), np.arange(self.d)] = 0.0
        mask[self.d + np.arange(self.d_s), self.missing] = 0.0
        return mask

    def apply_mask(self) -> None:
        self.tensors["w_in"] *= self.input_mask()[:, None, :]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.d, self.missing.copy(), self.hidden, self.depth,
                             {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in sorted(self.tensors)])

    def save(self, path: str | Path) -> None:
        obj = {
            "d": self.d,
            "missing": self.missing.tolist(),
            "hidden": self.hidden,
            "depth": self.depth,
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.tensors.items()},
        }
        Path(path).write_text(json.dumps(obj), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NetworkParams":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        tensors = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in obj["tensors"].items()}
        return cls(obj["d"], np.array(obj["missing"], dtype=int), obj["hidden"], obj["depth"], tensors)


def init_params(d: int, missing, hidden: int | None = None, depth: int = 3, seed: int = 0) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, masks applied.

    ``missing`` is either the list S or just its size d_S (then S = the last
    d_S columns, useful for shape-only work).
    """
    if np.isscalar(missing):
        missing = np.arange(d - int(missing), d)
    missing = np.asarray(missing, dtype=int)
    hidden = d if hidden is None else hidden
    if hidden < 1 or depth < 3:
        raise ValueError("need hidden >= 1 and depth >= 3")
    rng = np.random.default_rng(seed)
    heads = d + len(missing)

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t = {"w_in": uni(d, (heads, hidden, d)), "b_in": uni(d, (heads, hidden))}
    for i in range(depth - 2):
        t[f"w_hid{i}"] = uni(hidden, (hidden, hidden))
        t[f"b_hid{i}"] = uni(hidden, (hidden,))
    t["w_out"] = uni(hidden, (heads, hidden))
    t["b_out"] = uni(hidden, (heads,))
    params = NetworkParams(d, missing, hidden, depth, t)
    params.apply_mask()
    return params


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    x: np.ndarray
    slope: list  # ELU derivative at each pre-activation, one (heads, n, h) array per layer
    post: list  # activations after ELU
    raw_prob: np.ndarray  # unclamped sigmoid output, (n, d_s)
    imp: np.ndarray  # (n, d)
    prob: np.ndarray  # clamped, (n, d_s)


def _check(name, a):
    if not np.isfinite(a).all():
        raise FloatingPointError(f"non-finite values in layer {name}")


def forward(params: NetworkParams, x: np.ndarray, cache: bool = False):
    """Evaluate both heads on rows of ``x``.

    Returns ``(imp, prob)`` with shapes (n, d) and (n, d_S) (or the 1-D
    variants for a single row), or a :class:`ForwardCache` if ``cache``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    _check("input", x2)
    t = params.tensors
    z = np.matmul(x2[None], t["w_in"].transpose(0, 2, 1)) + t["b_in"][:, None, :]
    _check("input layer", z)
    a, g = elu_fused(z)
    slope, post = [g], [a]
    for i in range(params.n_shared):
        z = post[-1] @ t[f"w_hid{i}"].T + t[f"b_hid{i}"]
        _check(f"hidden layer {i + 1}", z)
        a, g = elu_fused(z)
        slope.append(g)
        post.append(a)
    out = np.einsum("cnh,ch->cn", post[-1], t["w_out"]) + t["b_out"][:, None]
    _check("output layer", out)
    imp = out[: params.d].T
    raw = sigmoid(out[params.d :].T)
    prob = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    if cache:
        return ForwardCache(x2, slope, post, raw, imp, prob)
    if single:
        return imp[0], prob[0]
    return imp, prob


def backward(params: NetworkParams, fc: ForwardCache, d_imp: np.ndarray, d_prob: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its partials w.r.t. imp and prob."""
    t = params.tensors
    inside = (fc.raw_prob > PROB_EPS) & (fc.raw_prob < 1.0 - PROB_EPS)
    d_logit = np.where(inside, d_prob * fc.raw_prob * (1.0 - fc.raw_prob), 0.0)
    d_out = np.concatenate([d_imp.T, d_logit.T], axis=0)  # (heads, n)
    g = {
        "w_out": np.einsum("cn,cnh->ch", d_out, fc.post[-1]),
        "b_out": d_out.sum(axis=1),
    }
    d_a = d_out[:, :, None] * t["w_out"][:, None, :]
    h = params.hidden
    for i in reversed(range(params.n_shared)):
        d_z = d_a * fc.slope[i + 1]
        g[f"w_hid{i}"] = d_z.reshape(-1, h).T @ fc.post[i].reshape(-1, h)
        g[f"b_hid{i}"] = d_z.sum(axis=(0, 1))
        d_a = d_z @ t[f"w_hid{i}"]
    d_z = d_a * fc.slope[0]
    g["w_in"] = np.matmul(d_z.transpose(0, 2, 1), fc.x) * params.input_mask()[:, None, :]
    g["b_in"] = d_z.sum(axis=1)
    return g


@dataclass(frozen=True)
class AdjacencyEstimate:
    """Column-norm edge strengths over the d features then the d_S indicators."""

    B: np.ndarray
    d: int
    missing: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def to_csv(self, path: str | Path) -> None:
        labels = self.labels or tuple(f"x{j + 1}" for j in range(self.d)) + tuple(
            f"r{self.missing[m] + 1}" for m in range(len(self.missing))
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["source"] + list(labels)) + "\n")
            for lab, row in zip(labels, self.B):
                fh.write(",".join([lab] + [repr(float(v)) for v in row]) + "\n")


def column_norms(params: NetworkParams) -> np.ndarray:
    """(heads, d): L2 norm of every input column of every head's first layer."""
    return np.sqrt((params.tensors["w_in"] ** 2).sum(axis=1))


def extract_adjacency(params: NetworkParams, labels=()) -> AdjacencyEstimate:
    size = params.n_heads
    b = np.zeros((size, size))
    b[: params.d, :] = column_norms(params).T
    return AdjacencyEstimate(b, params.d, tuple(int(s) for s in params.missing), tuple(labels))
