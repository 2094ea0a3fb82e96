"""Score network: a small rectifier MLP with per-timestep bias embeddings.

Architecture (matching the experimental protocol everywhere in this repo):
four affine maps of hidden width 64, each followed by an additive embedding
row selected by the integer timestep, rectifier activations between layers,
and an optional skip connection adding the input to the final output:

    h_0 = x
    z_l = W_l h_{l-1} + b_l + E_l[t],   h_l = relu(z_l)   (l = 1..3)
    out = z_4 (+ x when final_skip)

Gradients are computed analytically by hand here (no autodiff anywhere in
the package), which keeps the parameter updates bit-reproducible and lets
tests check them against central finite differences.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import ConfigError

DEFAULT_WIDTH = 64
N_LAYERS = 4


@dataclasses.dataclass
class ScoreNetwork:
    weights: list    # W_l with shape (out_dim, in_dim)
    biases: list     # b_l with shape (out_dim,)
    embeddings: list  # E_l with shape (T, out_dim), row = timestep t-1
    final_skip: bool = True

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def T(self) -> int:
        return self.embeddings[0].shape[0]

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list:
        """Flat parameter list in the fixed order W_l, b_l, E_l per layer."""
        out = []
        for W, b, E in zip(self.weights, self.biases, self.embeddings):
            out.extend((W, b, E))
        return out

    def param_names(self) -> list:
        out = []
        for l in range(len(self.weights)):
            out.extend((f"w{l}", f"b{l}", f"e{l}"))
        return out


def init_network(dim: int, T: int, width: int = DEFAULT_WIDTH,
                 final_skip: bool = True, seed: int = 0) -> ScoreNetwork:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases and embeddings."""
    if dim < 1 or T < 1 or width < 1:
        raise ConfigError(f"bad network shape: dim={dim}, T={T}, width={width}")
    rng = np.random.default_rng(seed)
    dims = [dim] + [width] * (N_LAYERS - 1) + [dim]
    weights, biases, embeddings = [], [], []
    for l in range(N_LAYERS):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        embeddings.append(np.zeros((T, fan_out)))
    return ScoreNetwork(weights=weights, biases=biases, embeddings=embeddings,
                        final_skip=final_skip)


def _t_index(net: ScoreNetwork, t, n: int) -> np.ndarray:
    idx = np.asarray(t, dtype=np.int64) - 1
    if idx.ndim == 0:
        idx = np.full(n, idx)
    if idx.min() < 0 or idx.max() >= net.T:
        raise ConfigError(f"timestep outside 1..{net.T}")
    return idx


def forward_batch(net: ScoreNetwork, X: np.ndarray, t) -> np.ndarray:
    """Evaluate the field on a (B, dim) batch; t is a scalar or (B,) ints."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    idx = _t_index(net, t, X.shape[0])
    h = X
    last = len(net.weights) - 1
    for l, (W, b, E) in enumerate(zip(net.weights, net.biases, net.embeddings)):
        z = h @ W.T + b + E[idx]
        h = z if l == last else np.maximum(z, 0.0)
    return h + X if net.final_skip else h


def forward_eval(net: ScoreNetwork, x: np.ndarray, t: int) -> np.ndarray:
    return forward_batch(net, np.asarray(x)[None, :], t)[0]


def as_score_fn(net: ScoreNetwork):
    """Adapter so samplers/estimators can take a plain (X, t) -> scores callable."""
    return lambda X, t: forward_batch(net, X, t)


def backward_grads(net: ScoreNetwork, X: np.ndarray, t, targets: np.ndarray,
                   weights: np.ndarray) -> tuple[float, list]:
    """Mean weighted squared-error loss and its exact parameter gradients.

    loss = (1/B) sum_i  w_i/2 * ||net(x_i, t_i) - target_i||^2

    Returns (loss, grads) with grads ordered like ``net.params()``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    B = X.shape[0]
    idx = _t_index(net, t, B)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (B,))

    # Forward pass, caching pre-activations and layer inputs.
    hs, zs = [X], []
    last = len(net.weights) - 1
    h = X
    for l, (W, b, E) in enumerate(zip(net.weights, net.biases, net.embeddings)):
        z = h @ W.T + b + E[idx]
        zs.append(z)
        h = z if l == last else np.maximum(z, 0.0)
        hs.append(h)
    out = h + X if net.final_skip else h

    diff = out - targets
    loss = float(0.5 * np.sum(w * (diff ** 2).sum(axis=1)) / B)

    # Backward pass.
    delta = diff * (w / B)[:, None]  # d loss / d out
    grads: list = [None] * (3 * len(net.weights))
    for l in range(last, -1, -1):
        if l != last:
            delta = delta * (zs[l] > 0)  # through the rectifier
        gW = delta.T @ hs[l]
        gb = delta.sum(axis=0)
        gE = np.zeros_like(net.embeddings[l])
        np.add.at(gE, idx, delta)
        grads[3 * l:3 * l + 3] = [gW, gb, gE]
        if l > 0:
            delta = delta @ net.weights[l]
    return loss, grads


@dataclasses.dataclass
class OptimizerState:
    m: list
    v: list
    step: int
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adamw(net: ScoreNetwork, lr: float = 1e-3, weight_decay: float = 1e-2,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(m=[np.zeros_like(p) for p in net.params()],
                          v=[np.zeros_like(p) for p in net.params()],
                          step=0, lr=lr, weight_decay=weight_decay,
                          beta1=beta1, beta2=beta2, eps=eps)


def adamw_step(net: ScoreNetwork, grads: list, opt: OptimizerState, sign: int = -1) -> ScoreNetwork:
    """One decoupled-weight-decay adaptive step, in place.

    sign = -1 descends, +1 ascends.  The sign flips the gradient direction
    only; the decay term always shrinks parameters toward zero.
    """
    if sign not in (-1, 1):
        raise ConfigError(f"sign must be +1 or -1, got {sign}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for p, g, m, v in zip(net.params(), grads, opt.m, opt.v):
        g = -sign * g  # descend on +g when sign=-1, on -g when sign=+1
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p *= 1.0 - opt.lr * opt.weight_decay  # decay the pre-step value
        p -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return net


def power_iteration_sigma(W: np.ndarray, iters: int = 100) -> float:
    """Top singular value by alternating power iteration (fixed seeded start)."""
    if iters < 1:
        raise ConfigError(f"need iters >= 1, got {iters}")
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    u = np.zeros(W.shape[0])
    for _ in range(iters):
        u = W @ v
        u /= np.linalg.norm(u)
        v = W.T @ u
        v /= np.linalg.norm(v)
    return float(u @ W @ v)


def spectral_normalize(net: ScoreNetwork, iters: int = 100) -> ScoreNetwork:
    """Divide every weight matrix by its estimated top singular value (in place).

    Biases and embeddings are untouched.  Idempotent up to the power-iteration
    tolerance: a normalized matrix has unit spectral norm already.
    """
    for W in net.weights:
        W /= power_iteration_sigma(W, iters)
    return net


def weight_clip(net: ScoreNetwork, threshold: float = 0.1) -> ScoreNetwork:
    """Clamp weight-matrix entries to [-threshold, threshold] (in place)."""
    if threshold <= 0:
        raise ConfigError(f"clip threshold must be > 0, got {threshold}")
    for W in net.weights:
        np.clip(W, -threshold, threshold, out=W)
    return net


def save_network(net: ScoreNetwork, blob_path: str, meta_path: str) -> None:
    """Raw little-endian float64 blob plus a JSON shape sidecar; bit-exact."""
    names = net.param_names()
    params = net.params()
    meta = {
        "dim": net.dim,
        "T": net.T,
        "width": net.width,
        "final_skip": net.final_skip,
        "dtype": "<f8",
        "params": [{"name": n, "shape": list(p.shape)} for n, p in zip(names, params)],
    }
    with open(blob_path, "wb") as f:
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(meta_path, "w", newline="\n") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_network(blob_path: str, meta_path: str) -> ScoreNetwork:
    with open(meta_path) as f:
        meta = json.load(f)
    raw = np.fromfile(blob_path, dtype="<f8")
    arrays, offset = [], 0
    for entry in meta["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays.append(raw[offset:offset + size].reshape(entry["shape"]).copy())
        offset += size
    if offset != raw.size:
        raise ConfigError(f"blob holds {raw.size} values, sidecar expects {offset}")
    weights = arrays[0::3]
    biases = arrays[1::3]
    embeddings = arrays[2::3]
    return ScoreNetwork(weights=weights, biases=biases, embeddings=embeddings,
                        final_skip=bool(meta["final_skip"]))
