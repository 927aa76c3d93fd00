"""Task-conditioned multi-head policy.

The torso is a stack of dense layers, each modulated by a per-layer
scale-and-shift computed linearly from the task embedding z (scale is
1 + projection so the modulation starts near identity) and passed through
relu. Six heads branch from the final torso features: position delta (2),
rotation delta (1), gripper (1, sigmoid), and the same three modalities
for an H-step open-loop target sequence with validity masking.

The composite loss is 100*huber(position) + 10*huber(rotation) +
0.5*bce(gripper) on the primary heads plus the same expression averaged
over valid open-loop slots, scaled by aux_weight. Training adds per-example
Gaussian noise to z after normalization (not re-normalized).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .episodes import RawAction
from .featurize import ActionLabel, OPEN_LOOP_H

W_POS = 100.0
W_ROT = 10.0
W_GRIP = 0.5
AUX_WEIGHT = 1.0
HUBER_DELTA = 1.0
NOISE_SIGMA = 0.1

_HEAD_NAMES = ("pos", "rot", "grip", "ol_pos", "ol_rot", "ol_grip")


@dataclass
class PolicyNet:
    obs_dim: int
    z_dim: int
    horizon: int
    torso: list            # DenseLayer (identity); relu applied after modulation
    film_g: list           # per-torso-layer linear z -> scale offset
    film_b: list           # per-torso-layer linear z -> shift
    heads: dict            # name -> [DenseLayer, DenseLayer, DenseLayer]

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.torso):
            out[f"torso.{i}.W"], out[f"torso.{i}.b"] = layer.W, layer.b
            out[f"film_g.{i}.W"], out[f"film_g.{i}.b"] = self.film_g[i].W, self.film_g[i].b
            out[f"film_b.{i}.W"], out[f"film_b.{i}.b"] = self.film_b[i].W, self.film_b[i].b
        for name, layers in self.heads.items():
            for j, layer in enumerate(layers):
                out[f"head.{name}.{j}.W"], out[f"head.{name}.{j}.b"] = layer.W, layer.b
        return out


def init_policy(rng: np.random.Generator, obs_dim: int, z_dim: int,
                torso_widths=(128, 128, 128), head_widths=(64, 64),
                horizon: int = OPEN_LOOP_H, film_scale: float = 0.2) -> PolicyNet:
    torso, film_g, film_b = [], [], []
    prev = obs_dim
    for w in torso_widths:
        torso.append(nn.init_dense(rng, prev, w, "identity"))
        gproj = nn.init_dense(rng, z_dim, w, "identity", scale=film_scale / np.sqrt(z_dim))
        bproj = nn.init_dense(rng, z_dim, w, "identity", scale=film_scale / np.sqrt(z_dim))
        film_g.append(gproj)
        film_b.append(bproj)
        prev = w
    out_dims = {"pos": 2, "rot": 1, "grip": 1,
                "ol_pos": 2 * horizon, "ol_rot": horizon, "ol_grip": horizon}
    heads = {}
    for name in _HEAD_NAMES:
        layers = []
        h_prev = prev
        for w in head_widths:
            layers.append(nn.init_dense(rng, h_prev, w, "relu"))
            h_prev = w
        final_act = "sigmoid" if name in ("grip", "ol_grip") else "identity"
        layers.append(nn.init_dense(rng, h_prev, out_dims[name], final_act))
        heads[name] = layers
    return PolicyNet(obs_dim=obs_dim, z_dim=z_dim, horizon=horizon,
                     torso=torso, film_g=film_g, film_b=film_b, heads=heads)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------

def _forward(net: PolicyNet, obs: np.ndarray, z: np.ndarray):
    obs = nn.as_tensor2(obs, "obs")
    z = nn.as_tensor2(z, "z")
    if obs.shape[1] != net.obs_dim:
        raise nn.NumericError(f"obs width {obs.shape[1]}, policy expects {net.obs_dim}")
    if z.shape[1] != net.z_dim:
        raise nn.NumericError(f"z width {z.shape[1]}, policy expects {net.z_dim}")
    h = obs
    torso_caches = []
    for i, layer in enumerate(net.torso):
        u, cu = nn.dense_forward(layer, h)
        graw, cg = nn.dense_forward(net.film_g[i], z)
        beta, cb = nn.dense_forward(net.film_b[i], z)
        gamma = 1.0 + graw
        mod = nn.film(u, gamma, beta)
        h = np.maximum(mod, 0.0)
        torso_caches.append((cu, cg, cb, u, gamma, mod))
    head_out, head_caches = {}, {}
    for name, layers in net.heads.items():
        y = h
        caches = []
        for layer in layers:
            y, c = nn.dense_forward(layer, y)
            caches.append(c)
        head_out[name] = y
        head_caches[name] = caches
    for name, y in head_out.items():
        if not np.all(np.isfinite(y)):
            raise nn.NumericError(f"non-finite activations in head {name}")
    return head_out, (torso_caches, head_caches, h)


def _backward(net: PolicyNet, caches, dout: dict):
    """Gradients of a scalar loss given dL/d(head output) per head.
    Returns (param grads, dL/dz, dL/dobs)."""
    torso_caches, head_caches, h_final = caches
    grads = {}
    dh = np.zeros_like(h_final)
    for name, layers in net.heads.items():
        dy = dout[name]
        for j in range(len(layers) - 1, -1, -1):
            dy, dW, db = nn.dense_backward(layers[j], dy, head_caches[name][j])
            grads[f"head.{name}.{j}.W"] = dW
            grads[f"head.{name}.{j}.b"] = db
        dh += dy
    dz = None
    for i in range(len(net.torso) - 1, -1, -1):
        cu, cg, cb, u, gamma, mod = torso_caches[i]
        dmod = dh * (mod > 0.0)
        du = dmod * gamma
        dgamma = dmod * u
        dbeta = dmod
        dh, dWt, dbt = nn.dense_backward(net.torso[i], du, cu)
        grads[f"torso.{i}.W"], grads[f"torso.{i}.b"] = dWt, dbt
        dzg, dWg, dbg = nn.dense_backward(net.film_g[i], dgamma, cg)
        grads[f"film_g.{i}.W"], grads[f"film_g.{i}.b"] = dWg, dbg
        dzb, dWb, dbb = nn.dense_backward(net.film_b[i], dbeta, cb)
        grads[f"film_b.{i}.W"], grads[f"film_b.{i}.b"] = dWb, dbb
        dz = dzg + dzb if dz is None else dz + dzg + dzb
    return grads, dz, dh


def preactivation_margin(net: PolicyNet, obs: np.ndarray, z: np.ndarray) -> float:
    """Smallest |pre-activation| feeding any relu in the network.

    Finite-difference verification needs inputs away from relu kinks; callers
    re-roll their sample while this margin is tiny.
    """
    obs = nn.as_tensor2(obs, "obs")
    z = nn.as_tensor2(z, "z")
    margin = np.inf
    h = obs
    for i, layer in enumerate(net.torso):
        u, _ = nn.dense_forward(layer, h)
        graw, _ = nn.dense_forward(net.film_g[i], z)
        beta, _ = nn.dense_forward(net.film_b[i], z)
        mod = (1.0 + graw) * u + beta
        margin = min(margin, float(np.min(np.abs(mod))))
        h = np.maximum(mod, 0.0)
    for layers in net.heads.values():
        y = h
        for layer in layers:
            pre = y @ layer.W.T + layer.b
            if layer.activation == "relu":
                margin = min(margin, float(np.min(np.abs(pre))))
            y, _ = nn.dense_forward(layer, y)
    return margin


@dataclass(frozen=True)
class PredictedAction:
    d_pos: np.ndarray        # (2,)
    d_rot: float
    grip_p: float
    open_loop: np.ndarray    # (H, 4): dx, dy, dtheta, grip per slot


def policy_forward(net: PolicyNet, obs: np.ndarray, z: np.ndarray) -> PredictedAction:
    obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    out, _ = _forward(net, obs, z)
    H = net.horizon
    ol = np.zeros((H, 4))
    ol[:, :2] = out["ol_pos"][0].reshape(H, 2)
    ol[:, 2] = out["ol_rot"][0]
    ol[:, 3] = out["ol_grip"][0]
    return PredictedAction(d_pos=out["pos"][0].copy(), d_rot=float(out["rot"][0, 0]),
                           grip_p=float(out["grip"][0, 0]), open_loop=ol)


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------

def _composite(e_pos, e_rot, grip_p, grip_y, w_pos, w_rot, w_grip, delta):
    return (w_pos * nn.huber(e_pos, delta) + w_rot * nn.huber(e_rot, delta)
            + w_grip * nn.bce(grip_p, grip_y))


def policy_loss(pred: PredictedAction, label: ActionLabel,
                w_pos: float = W_POS, w_rot: float = W_ROT, w_grip: float = W_GRIP,
                aux_weight: float = AUX_WEIGHT, delta: float = HUBER_DELTA) -> float:
    """Weighted composite loss for one prediction against one label."""
    primary = _composite(pred.d_pos - label.d_pos,
                         np.array([pred.d_rot - label.d_rot]),
                         np.array([pred.grip_p]), np.array([label.grip_target]),
                         w_pos, w_rot, w_grip, delta)
    valid = np.flatnonzero(label.open_loop_mask)
    if valid.size == 0:
        return primary
    aux = 0.0
    for k in valid:
        aux += _composite(pred.open_loop[k, :2] - label.open_loop[k, :2],
                          np.array([pred.open_loop[k, 2] - label.open_loop[k, 2]]),
                          np.array([pred.open_loop[k, 3]]), np.array([label.open_loop[k, 3]]),
                          w_pos, w_rot, w_grip, delta)
    return primary + aux_weight * aux / valid.size


@dataclass
class LabelBatch:
    obs: np.ndarray       # (B, obs_dim)
    z: np.ndarray         # (B, D) unit rows
    d_pos: np.ndarray     # (B, 2)
    d_rot: np.ndarray     # (B, 1)
    grip: np.ndarray      # (B, 1)
    ol: np.ndarray        # (B, H, 4)
    ol_mask: np.ndarray   # (B, H) bool

    @staticmethod
    def from_labels(labels: list, z_rows: np.ndarray) -> "LabelBatch":
        z_rows = np.asarray(z_rows, dtype=np.float64)
        if len(labels) != z_rows.shape[0]:
            raise nn.NumericError("labels and embeddings disagree on batch size")
        return LabelBatch(
            obs=np.stack([lab.obs for lab in labels]),
            z=z_rows,
            d_pos=np.stack([lab.d_pos for lab in labels]),
            d_rot=np.array([[lab.d_rot] for lab in labels]),
            grip=np.array([[lab.grip_target] for lab in labels]),
            ol=np.stack([lab.open_loop for lab in labels]),
            ol_mask=np.stack([lab.open_loop_mask for lab in labels]),
        )


def loss_and_grads(net: PolicyNet, batch: LabelBatch,
                   w_pos: float = W_POS, w_rot: float = W_ROT, w_grip: float = W_GRIP,
                   aux_weight: float = AUX_WEIGHT, delta: float = HUBER_DELTA):
    """Mean composite loss over the batch plus gradients.
    Returns (loss, param grads, dL/dz)."""
    B = batch.obs.shape[0]
    H = net.horizon
    out, caches = _forward(net, batch.obs, batch.z)

    e_pos = out["pos"] - batch.d_pos
    e_rot = out["rot"] - batch.d_rot
    primary = (w_pos * nn.huber(e_pos, delta) + w_rot * nn.huber(e_rot, delta)
               + w_grip * nn.bce(out["grip"], batch.grip))

    ol_pos = out["ol_pos"].reshape(B, H, 2)
    ol_rot = out["ol_rot"].reshape(B, H, 1)
    ol_grip = out["ol_grip"].reshape(B, H, 1)
    mask = batch.ol_mask.astype(np.float64)
    n_valid = mask.sum(axis=1)
    # per-example weight of each valid slot (zero where nothing is valid)
    slot_w = np.zeros_like(mask)
    nonzero = n_valid > 0
    slot_w[nonzero] = mask[nonzero] / n_valid[nonzero, None]

    e_olp = ol_pos - batch.ol[:, :, :2]
    e_olr = ol_rot - batch.ol[:, :, 2:3]
    y_olg = batch.ol[:, :, 3:4]
    hp = np.where(np.abs(e_olp) <= delta, 0.5 * e_olp ** 2,
                  delta * (np.abs(e_olp) - 0.5 * delta)).sum(axis=2)
    hr = np.where(np.abs(e_olr) <= delta, 0.5 * e_olr ** 2,
                  delta * (np.abs(e_olr) - 0.5 * delta)).sum(axis=2)
    pc = np.clip(ol_grip, 1e-7, 1.0 - 1e-7)
    bg = -(y_olg * np.log(pc) + (1.0 - y_olg) * np.log(1.0 - pc)).sum(axis=2)
    aux = float(np.sum(slot_w * (w_pos * hp + w_rot * hr + w_grip * bg)))

    loss = (primary + aux_weight * aux) / B
    if not np.isfinite(loss):
        raise nn.NumericError(f"non-finite training loss ({loss}); aborting step")

    dout = {
        "pos": w_pos * nn.huber_grad(e_pos, delta) / B,
        "rot": w_rot * nn.huber_grad(e_rot, delta) / B,
        "grip": w_grip * nn.bce_grad(out["grip"], batch.grip) / B,
    }
    sw = aux_weight * slot_w[:, :, None] / B
    dout["ol_pos"] = (w_pos * nn.huber_grad(e_olp, delta) * sw).reshape(B, 2 * H)
    dout["ol_rot"] = (w_rot * nn.huber_grad(e_olr, delta) * sw).reshape(B, H)
    dout["ol_grip"] = (w_grip * nn.bce_grad(ol_grip, y_olg) * sw).reshape(B, H)

    grads, dz, _ = _backward(net, caches, dout)
    return loss, grads, dz


def train_step(net: PolicyNet, adam: nn.AdamState, batch: LabelBatch,
               rng: np.random.Generator, noise_sigma: float = NOISE_SIGMA,
               w_pos: float = W_POS, w_rot: float = W_ROT, w_grip: float = W_GRIP,
               aux_weight: float = AUX_WEIGHT, delta: float = HUBER_DELTA) -> float:
    """One optimizer step on a batch; per-example Gaussian noise is added to
    the (already unit-norm) embeddings and deliberately not re-normalized."""
    z = batch.z
    if noise_sigma > 0.0:
        z = z + rng.normal(0.0, noise_sigma, size=z.shape)
    noisy = LabelBatch(obs=batch.obs, z=z, d_pos=batch.d_pos, d_rot=batch.d_rot,
                       grip=batch.grip, ol=batch.ol, ol_mask=batch.ol_mask)
    loss, grads, _ = loss_and_grads(net, noisy, w_pos, w_rot, w_grip, aux_weight, delta)
    nn.adam_step(adam, net.params(), grads)
    return loss


def act(net: PolicyNet, obs: np.ndarray, z: np.ndarray,
        a_max_pos: float = 0.05, a_max_rot: float = 0.2) -> RawAction:
    """Greedy action: primary heads, clamped, no noise, no state mutation."""
    pred = policy_forward(net, obs, z)
    dx = float(np.clip(pred.d_pos[0], -a_max_pos, a_max_pos))
    dy = float(np.clip(pred.d_pos[1], -a_max_pos, a_max_pos))
    dth = float(np.clip(pred.d_rot, -a_max_rot, a_max_rot))
    return RawAction(dx, dy, dth, pred.grip_p)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_policy(path: str, net: PolicyNet, adam: nn.AdamState | None = None,
                extra_meta: dict | None = None) -> None:
    arrays = dict(net.params())
    meta = {
        "kind": "policy",
        "obs_dim": net.obs_dim,
        "z_dim": net.z_dim,
        "horizon": net.horizon,
        "torso_widths": [l.out_dim for l in net.torso],
        "head_widths": [l.out_dim for l in net.heads["pos"][:-1]],
    }
    if extra_meta:
        meta.update(extra_meta)
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                        "eps": adam.eps, "step_count": adam.step_count}
        for name, m in adam.m.items():
            arrays[f"adam.m.{name}"] = m
            arrays[f"adam.v.{name}"] = adam.v[name]
    nn.save_checkpoint(path, arrays, meta)


def load_policy(path: str):
    """Returns (net, adam or None, meta)."""
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "policy":
        raise nn.NumericError(f"{path} is not a policy checkpoint")
    net = init_policy(np.random.default_rng(0), meta["obs_dim"], meta["z_dim"],
                      torso_widths=tuple(meta["torso_widths"]),
                      head_widths=tuple(meta["head_widths"]),
                      horizon=meta["horizon"])
    params = net.params()
    for name, p in params.items():
        if name not in arrays:
            raise nn.NumericError(f"{path}: checkpoint missing array {name}")
        p[...] = arrays[name]
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = nn.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                            eps=a["eps"], step_count=a["step_count"])
        for name in params:
            key = f"adam.m.{name}"
            if key in arrays:
                adam.m[name] = arrays[key]
                adam.v[name] = arrays[f"adam.v.{name}"]
    return net, adam, meta
