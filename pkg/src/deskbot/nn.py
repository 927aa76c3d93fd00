"""Dense math kernel: layers, feature-wise modulation, losses, Adam, and
finite-difference gradient verification.

All numerics are float64. Backward passes are hand-derived per operation;
the network graphs built on top (policy, embedding encoder) are fixed, so
no general tape is needed. Stochastic ops take an explicit generator from
`rng_stream`, a counter-based stream keyed by (seed, tags), which makes
training runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

# 2-D float64 array, row-major. Plain ndarray; validated at boundaries.
Tensor2 = np.ndarray


class NumericError(ValueError):
    pass


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def as_tensor2(arr, name: str = "tensor") -> Tensor2:
    out = check_finite(name, arr)
    if out.ndim != 2:
        raise NumericError(f"{name} must be 2-D, got shape {out.shape}")
    return out


def rng_stream(seed: int, *tags) -> np.random.Generator:
    """Independent counter-based stream for (seed, tags)."""
    digest = hashlib.sha256(repr((int(seed),) + tags).encode()).digest()
    key = int.from_bytes(digest[:16], "big")
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return sigmoid(pre)
    raise NumericError(f"unknown activation {activation!r}")


def _activation_grad(pre: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return np.ones_like(pre)
    if activation == "relu":
        return (pre > 0.0).astype(np.float64)
    if activation == "sigmoid":
        return out * (1.0 - out)
    raise NumericError(f"unknown activation {activation!r}")


# --------------------------------------------------------------------------
# Dense layer
# --------------------------------------------------------------------------

@dataclass
class DenseLayer:
    W: Tensor2               # (out_dim, in_dim)
    b: np.ndarray            # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        self.W = as_tensor2(self.W, "W")
        self.b = check_finite("b", self.b)
        if self.b.shape != (self.W.shape[0],):
            raise NumericError(f"b shape {self.b.shape} vs W {self.W.shape}")
        if self.activation not in ("identity", "relu", "sigmoid"):
            raise NumericError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "identity", scale: float | None = None) -> DenseLayer:
    """He-style init for relu, Glorot-style otherwise; zero bias."""
    if scale is None:
        scale = np.sqrt(2.0 / in_dim) if activation == "relu" else np.sqrt(1.0 / in_dim)
    W = rng.normal(0.0, scale, size=(out_dim, in_dim))
    return DenseLayer(W=W, b=np.zeros(out_dim), activation=activation)


def dense_forward(layer: DenseLayer, x: Tensor2):
    """y = act(x W^T + b) for a batch of rows. Returns (y, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != layer.in_dim:
        raise NumericError(f"input width {x.shape[1]}, layer expects {layer.in_dim}")
    pre = x @ layer.W.T + layer.b
    y = _activate(pre, layer.activation)
    return y, (x, pre, y)


def dense_backward(layer: DenseLayer, dy: Tensor2, cache):
    """Returns (dx, dW, db) for upstream gradient dy."""
    x, pre, y = cache
    dpre = dy * _activation_grad(pre, y, layer.activation)
    dW = dpre.T @ x
    db = dpre.sum(axis=0)
    dx = dpre @ layer.W
    return dx, dW, db


# --------------------------------------------------------------------------
# Feature-wise modulation (scale-and-shift before the nonlinearity)
# --------------------------------------------------------------------------

def film(h: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    h, gamma, beta = (np.asarray(v, dtype=np.float64) for v in (h, gamma, beta))
    if h.shape != gamma.shape or h.shape != beta.shape:
        raise NumericError(f"length mismatch: h {h.shape}, gamma {gamma.shape}, beta {beta.shape}")
    return gamma * h + beta


def film_backward(dout: np.ndarray, h: np.ndarray, gamma: np.ndarray):
    """Returns (dh, dgamma, dbeta)."""
    return dout * gamma, dout * h, dout.copy()


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def huber(err: np.ndarray, delta: float = 1.0) -> float:
    """Summed per-component Huber loss of an error vector/array."""
    if delta <= 0:
        raise NumericError("delta must be positive")
    err = check_finite("err", err)
    a = np.abs(err)
    quad = 0.5 * err ** 2
    lin = delta * (a - 0.5 * delta)
    return float(np.sum(np.where(a <= delta, quad, lin)))


def huber_grad(err: np.ndarray, delta: float = 1.0) -> np.ndarray:
    err = np.asarray(err, dtype=np.float64)
    return np.where(np.abs(err) <= delta, err, delta * np.sign(err))


def bce(p: np.ndarray, y: np.ndarray) -> float:
    """Summed binary cross-entropy; predictions clamped to [1e-7, 1-1e-7]."""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise NumericError("bce target outside [0, 1]")
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return float(np.sum(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))))


def bce_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dL/dp at the clamped prediction."""
    p, y = np.asarray(p, dtype=np.float64), np.asarray(y, dtype=np.float64)
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return -(y / pc) + (1.0 - y) / (1.0 - pc)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - u.v for unit vectors."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    for name, vec in (("u", u), ("v", v)):
        if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
            raise NumericError(f"{name} is not unit-norm")
    return float(1.0 - u @ v)


def cosine_distance_grad(u: np.ndarray, v: np.ndarray):
    """Returns (dL/du, dL/dv)."""
    return -np.asarray(v, dtype=np.float64), -np.asarray(u, dtype=np.float64)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Row-wise for 2-D input, whole-vector for 1-D."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm <= 1e-9):
        raise NumericError("cannot normalize a near-zero vector")
    return v / norm


def l2_normalize_backward(dout: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gradient through y = v/|v|: (dout - y (dout.y)) / |v|, row-wise."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    y = v / norm
    proj = np.sum(dout * y, axis=-1, keepdims=True)
    return (dout - y * proj) / norm


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam update, in place on the arrays in `params`."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise NumericError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------

def grad_check(loss_and_grads, params: dict, h: float = 1e-5,
               max_coords_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_and_grads()` must evaluate the loss and its gradients at the
    current parameter values (it is re-called after each perturbation).
    Relative error is |a - n| / max(|a|, |n|, 1e-3) per coordinate.
    """
    _, grads = loss_and_grads()
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        gflat = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grads()
            flat[i] = orig - h
            down, _ = loss_and_grads()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while checking {name}")
            numeric = (up - down) / (2.0 * h)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst


# --------------------------------------------------------------------------
# Checkpoint container
# --------------------------------------------------------------------------

CKPT_FORMAT = "deskbot-ckpt/1"


def save_checkpoint(path: str, arrays: dict, meta: dict | None = None) -> None:
    """JSON manifest line + concatenated little-endian float64 buffers.

    Deterministic byte-for-byte: no timestamps, arrays written in the
    manifest's order, values preserved exactly.
    """
    names = list(arrays.keys())
    manifest = {
        "format": CKPT_FORMAT,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode() + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Returns (arrays, meta); inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header)
        except ValueError as exc:
            raise NumericError(f"{path}: bad checkpoint manifest: {exc}") from exc
        if manifest.get("format") != CKPT_FORMAT:
            raise NumericError(f"{path}: unexpected checkpoint format")
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise NumericError(f"{path}: truncated checkpoint buffer for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise NumericError(f"{path}: trailing bytes after checkpoint payload")
    return arrays, manifest.get("meta", {})
