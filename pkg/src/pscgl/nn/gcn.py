"""Two-layer GCN for graph classification, implemented on plain numpy.

Forward path per graph, with Â the symmetric-normalized adjacency:

    H1 = Dropout(ReLU(BN1(Â X W1)))
    H2 = Dropout(ReLU(BN2(Â H1 W2)))
    e  = concat(sum_i gate(H2_i) * H2_i,  max_i H2_i)      # 128-dim readout
    h  = ReLU(e @ Wh + bh)                                  # latent, 128-dim
    logits = h @ Wo + bo

Training batches are processed jointly: batch normalization statistics are
taken over all nodes of all graphs in the batch, so forward/backward operate
on the concatenated node matrix with per-graph propagation blocks.

All arithmetic is float64; backward returns exact analytic gradients,
including through the BN batch statistics, dropout masks, both pooling
branches, and the gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..data import Graph
from ..errors import ContractViolation

HIDDEN_DIM = 64
EMBED_DIM = 2 * HIDDEN_DIM
MLP_HIDDEN_DIM = 128

TRAIN = "train"
EVAL = "eval"


def normalize_adjacency(g: Graph) -> np.ndarray:
    """Â = D̃^{-1/2} (A + I) D̃^{-1/2} for the graph's symmetric adjacency."""
    n = g.node_count
    a = np.eye(n, dtype=np.float64)
    for u, v in g.edges:
        a[u, v] = 1.0
        a[v, u] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9


@dataclass
class GcnModel:
    w1: np.ndarray            # (feature_dim, 64)
    bn1: BatchNorm
    w2: np.ndarray            # (64, 64)
    bn2: BatchNorm
    gate_w: np.ndarray        # (64,)
    gate_b: np.ndarray        # (1,)
    mlp_hidden_w: np.ndarray  # (128, 128)
    mlp_hidden_b: np.ndarray  # (128,)
    mlp_out_w: np.ndarray     # (128, class_count)
    mlp_out_b: np.ndarray     # (class_count,)
    dropout_rate: float = 0.5
    version: int = 0          # bumped by optimizer steps; guards stale caches

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def class_count(self) -> int:
        return self.mlp_out_w.shape[1]


def named_parameters(model: GcnModel) -> list[tuple[str, np.ndarray]]:
    """Trainable tensors in a fixed order (BN running stats excluded)."""
    return [
        ("w1", model.w1),
        ("bn1.gamma", model.bn1.gamma),
        ("bn1.beta", model.bn1.beta),
        ("w2", model.w2),
        ("bn2.gamma", model.bn2.gamma),
        ("bn2.beta", model.bn2.beta),
        ("gate_w", model.gate_w),
        ("gate_b", model.gate_b),
        ("mlp_hidden_w", model.mlp_hidden_w),
        ("mlp_hidden_b", model.mlp_hidden_b),
        ("mlp_out_w", model.mlp_out_w),
        ("mlp_out_b", model.mlp_out_b),
    ]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(
    feature_dim: int,
    class_count: int,
    rng: np.random.Generator,
    dropout_rate: float = 0.5,
) -> GcnModel:
    """Glorot-uniform weights, zero biases, identity batch norm."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ContractViolation(f"dropout_rate must be in [0,1), got {dropout_rate}")

    def bn() -> BatchNorm:
        return BatchNorm(
            gamma=np.ones(HIDDEN_DIM),
            beta=np.zeros(HIDDEN_DIM),
            running_mean=np.zeros(HIDDEN_DIM),
            running_var=np.ones(HIDDEN_DIM),
        )

    return GcnModel(
        w1=_glorot(rng, feature_dim, HIDDEN_DIM, (feature_dim, HIDDEN_DIM)),
        bn1=bn(),
        w2=_glorot(rng, HIDDEN_DIM, HIDDEN_DIM, (HIDDEN_DIM, HIDDEN_DIM)),
        bn2=bn(),
        gate_w=_glorot(rng, HIDDEN_DIM, 1, (HIDDEN_DIM,)),
        gate_b=np.zeros(1),
        mlp_hidden_w=_glorot(rng, EMBED_DIM, MLP_HIDDEN_DIM, (EMBED_DIM, MLP_HIDDEN_DIM)),
        mlp_hidden_b=np.zeros(MLP_HIDDEN_DIM),
        mlp_out_w=_glorot(rng, MLP_HIDDEN_DIM, class_count, (MLP_HIDDEN_DIM, class_count)),
        mlp_out_b=np.zeros(class_count),
        dropout_rate=dropout_rate,
    )


@dataclass
class ForwardCache:
    """Everything backward needs, for one forward over a batch of graphs."""

    mode: str
    model_version: int
    node_counts: list[int]
    offsets: np.ndarray            # (B+1,) segment boundaries into node rows
    ahats: list[np.ndarray]
    m1: np.ndarray                 # Â X, concatenated             (N, D)
    xhat1: np.ndarray              # BN1 normalized input          (N, 64)
    invstd1: np.ndarray            # (64,)
    mask1: np.ndarray              # fused ReLU * dropout multiplier (N, 64)
    m2: np.ndarray                 # Â H1                          (N, 64)
    xhat2: np.ndarray
    invstd2: np.ndarray
    mask2: np.ndarray
    h2: np.ndarray                 # post-dropout layer-2 output   (N, 64)
    gate: np.ndarray               # sigmoid gate per node         (N,)
    argmax_rows: np.ndarray | None  # per graph, per channel       (B, 64); train mode only
    embeddings: np.ndarray         # graph embeddings              (B, 128)
    relu_latent: np.ndarray        # bool mask                     (B, 128)
    latent_h: np.ndarray           # second-to-last layer output   (B, 128)
    logits: np.ndarray             # (B, C)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _propagate(ahats: list[np.ndarray], x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for i, a in enumerate(ahats):
        s, e = offsets[i], offsets[i + 1]
        out[s:e] = a @ x[s:e]
    return out


def _batchnorm_forward(
    bn: BatchNorm, z: np.ndarray, mode: str, update_running: bool
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (output, xhat, invstd). Eval mode uses running statistics."""
    if mode == TRAIN:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if update_running:
            bn.running_mean = bn.momentum * bn.running_mean + (1 - bn.momentum) * mu
            bn.running_var = bn.momentum * bn.running_var + (1 - bn.momentum) * var
    else:
        mu = bn.running_mean
        var = bn.running_var
    invstd = 1.0 / np.sqrt(var + bn.eps)
    xhat = (z - mu) * invstd
    return bn.gamma * xhat + bn.beta, xhat, invstd


def forward_batch(
    model: GcnModel,
    feats: Sequence[np.ndarray],
    ahats: Sequence[np.ndarray],
    mode: str = EVAL,
    rng: np.random.Generator | None = None,
    update_running: bool = True,
) -> tuple[np.ndarray, ForwardCache]:
    """Joint forward over a batch of graphs.

    In train mode, BN uses statistics over all nodes in the batch and
    dropout masks are drawn from `rng` (inverted dropout). Eval mode is a
    pure function of (model, inputs).
    """
    if mode not in (TRAIN, EVAL):
        raise ContractViolation(f"mode must be train|eval, got {mode!r}")
    node_counts = [f.shape[0] for f in feats]
    offsets = np.concatenate([[0], np.cumsum(node_counts)])
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in feats], axis=0)
    if x.shape[1] != model.feature_dim:
        raise ContractViolation(
            f"feature width {x.shape[1]} does not match model input width {model.feature_dim}"
        )
    ahats = list(ahats)
    train = mode == TRAIN

    use_dropout = train and model.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ContractViolation("train-mode forward with dropout needs an rng")
    keep = 1.0 - model.dropout_rate

    def activation_mask(pre: np.ndarray) -> np.ndarray:
        # fused ReLU indicator times inverted-dropout multiplier
        mask = (pre > 0).astype(np.float64)
        if use_dropout:
            mask *= (rng.random(pre.shape) < keep) / keep
        return mask

    m1 = _propagate(ahats, x, offsets)
    z1 = m1 @ model.w1
    b1, xhat1, invstd1 = _batchnorm_forward(model.bn1, z1, mode, train and update_running)
    mask1 = activation_mask(b1)
    h1 = b1 * mask1

    m2 = _propagate(ahats, h1, offsets)
    z2 = m2 @ model.w2
    b2, xhat2, invstd2 = _batchnorm_forward(model.bn2, z2, mode, train and update_running)
    mask2 = activation_mask(b2)
    h2 = b2 * mask2

    gate = _sigmoid(h2 @ model.gate_w + model.gate_b[0])

    n_graphs = len(node_counts)
    starts = offsets[:-1]
    embeddings = np.empty((n_graphs, EMBED_DIM))
    np.add.reduceat(h2 * gate[:, None], starts, axis=0, out=embeddings[:, :HIDDEN_DIM])
    np.maximum.reduceat(h2, starts, axis=0, out=embeddings[:, HIDDEN_DIM:])
    argmax_rows = None
    if train:
        # first-argmax row per channel per graph, for the max-pool backward
        argmax_rows = np.empty((n_graphs, HIDDEN_DIM), dtype=np.int64)
        for i in range(n_graphs):
            argmax_rows[i] = np.argmax(h2[offsets[i] : offsets[i + 1]], axis=0)

    q = embeddings @ model.mlp_hidden_w + model.mlp_hidden_b
    relu_latent = q > 0
    latent_h = np.where(relu_latent, q, 0.0)
    logits = latent_h @ model.mlp_out_w + model.mlp_out_b
    assert np.isfinite(logits).all(), "non-finite logits"

    cache = ForwardCache(
        mode=mode,
        model_version=model.version,
        node_counts=node_counts,
        offsets=offsets,
        ahats=ahats,
        m1=m1,
        xhat1=xhat1,
        invstd1=invstd1,
        mask1=mask1,
        m2=m2,
        xhat2=xhat2,
        invstd2=invstd2,
        mask2=mask2,
        h2=h2,
        gate=gate,
        argmax_rows=argmax_rows,
        embeddings=embeddings,
        relu_latent=relu_latent,
        latent_h=latent_h,
        logits=logits,
    )
    return logits, cache


def forward(
    model: GcnModel,
    g: Graph,
    mode: str = EVAL,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Single-graph forward; returns (logits vector, cache)."""
    logits, cache = forward_batch(
        model, [g.features], [normalize_adjacency(g)], mode=mode, rng=rng
    )
    return logits[0], cache


def _batchnorm_backward(
    bn: BatchNorm, d_out: np.ndarray, xhat: np.ndarray, invstd: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient through train-mode BN with batch statistics.

    dz_i = gamma*invstd/N * (N*dy_i - sum_j dy_j - xhat_i * sum_j dy_j xhat_j)
    """
    n = d_out.shape[0]
    dgamma = np.einsum("nc,nc->c", d_out, xhat)
    dbeta = d_out.sum(axis=0)
    dz = d_out * n
    dz -= dbeta
    dz -= xhat * dgamma
    dz *= bn.gamma * invstd / n
    return dz, dgamma, dbeta


def backward_batch(
    model: GcnModel,
    cache: ForwardCache,
    d_logits: np.ndarray,
    d_latent: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. every trainable tensor.

    `d_logits` is dLoss/dlogits (B, C); `d_latent` optionally adds
    dLoss/dlatent_h (B, 128) for losses that read the second-to-last layer
    directly (the consistency term does).
    """
    if cache.mode != TRAIN:
        raise ContractViolation("backward needs a cache from a train-mode forward")
    if cache.model_version != model.version:
        raise ContractViolation("stale cache: model was updated after this forward")

    d_logits = np.asarray(d_logits, dtype=np.float64)
    # output head
    d_mlp_out_w = cache.latent_h.T @ d_logits
    d_mlp_out_b = d_logits.sum(axis=0)
    dh = d_logits @ model.mlp_out_w.T
    if d_latent is not None:
        dh = dh + d_latent
    dq = np.where(cache.relu_latent, dh, 0.0)
    d_mlp_hidden_w = cache.embeddings.T @ dq
    d_mlp_hidden_b = dq.sum(axis=0)
    d_embed = dq @ model.mlp_hidden_w.T

    # readout
    d_ws = d_embed[:, :HIDDEN_DIM]
    d_mp = d_embed[:, HIDDEN_DIM:]
    counts = cache.node_counts
    # gated weighted sum, vectorized over all nodes
    d_ws_rep = np.repeat(d_ws, counts, axis=0)                 # (N, 64)
    dgate = np.einsum("nc,nc->n", cache.h2, d_ws_rep)
    du = dgate * cache.gate * (1.0 - cache.gate)
    d_gate_w = cache.h2.T @ du
    d_gate_b = np.array([du.sum()])
    dh2 = cache.gate[:, None] * d_ws_rep
    dh2 += du[:, None] * model.gate_w[None, :]
    # max pool: route to first argmax row per channel
    cols = np.arange(HIDDEN_DIM)
    for i in range(len(counts)):
        dh2[cache.offsets[i] + cache.argmax_rows[i], cols] += d_mp[i]

    # layer 2 (mask fuses ReLU and dropout)
    db2 = dh2
    db2 *= cache.mask2
    dz2, d_gamma2, d_beta2 = _batchnorm_backward(model.bn2, db2, cache.xhat2, cache.invstd2)
    d_w2 = cache.m2.T @ dz2
    dm2 = dz2 @ model.w2.T
    dh1 = _propagate(cache.ahats, dm2, cache.offsets)  # Â symmetric

    # layer 1
    db1 = dh1
    db1 *= cache.mask1
    dz1, d_gamma1, d_beta1 = _batchnorm_backward(model.bn1, db1, cache.xhat1, cache.invstd1)
    d_w1 = cache.m1.T @ dz1

    grads = {
        "w1": d_w1,
        "bn1.gamma": d_gamma1,
        "bn1.beta": d_beta1,
        "w2": d_w2,
        "bn2.gamma": d_gamma2,
        "bn2.beta": d_beta2,
        "gate_w": d_gate_w,
        "gate_b": d_gate_b,
        "mlp_hidden_w": d_mlp_hidden_w,
        "mlp_hidden_b": d_mlp_hidden_b,
        "mlp_out_w": d_mlp_out_w,
        "mlp_out_b": d_mlp_out_b,
    }
    assert all(np.isfinite(g).all() for g in grads.values()), "non-finite gradient"
    return grads


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def seen_mask(class_count: int, seen_classes: Iterable[int]) -> np.ndarray:
    mask = np.zeros(class_count, dtype=bool)
    for c in seen_classes:
        if not 0 <= c < class_count:
            raise ContractViolation(f"class {c} outside output width {class_count}")
        mask[c] = True
    if not mask.any():
        raise ContractViolation("seen_classes is empty")
    return mask


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over the masked classes; -inf outside the mask."""
    out = np.full_like(logits, -np.inf)
    sel = logits[..., mask]
    m = sel.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(sel - m).sum(axis=-1, keepdims=True))
    out[..., mask] = sel - lse
    return out


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax restricted to masked classes; exact zeros outside."""
    out = np.zeros_like(logits)
    sel = logits[..., mask]
    m = sel.max(axis=-1, keepdims=True)
    ex = np.exp(sel - m)
    out[..., mask] = ex / ex.sum(axis=-1, keepdims=True)
    return out


def masked_cross_entropy(logits: np.ndarray, label: int, seen_classes: Iterable[int]) -> float:
    """-log p(label) with unseen-class logits masked out before softmax."""
    mask = seen_mask(logits.shape[-1], seen_classes)
    if not mask[label]:
        raise ContractViolation(f"label {label} is not among the seen classes")
    return float(-masked_log_softmax(logits, mask)[label])


def mse(u: np.ndarray, v: np.ndarray) -> float:
    """Mean of squared elementwise differences."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractViolation(f"mse shape mismatch: {u.shape} vs {v.shape}")
    d = u - v
    return float(np.mean(d * d))


# --------------------------------------------------------------------------
# checkpointing
# --------------------------------------------------------------------------


def save_model(model: GcnModel, path: str) -> None:
    """Self-describing npz checkpoint; bit-exact round trip."""
    np.savez(
        path,
        w1=model.w1,
        bn1_gamma=model.bn1.gamma,
        bn1_beta=model.bn1.beta,
        bn1_running_mean=model.bn1.running_mean,
        bn1_running_var=model.bn1.running_var,
        w2=model.w2,
        bn2_gamma=model.bn2.gamma,
        bn2_beta=model.bn2.beta,
        bn2_running_mean=model.bn2.running_mean,
        bn2_running_var=model.bn2.running_var,
        gate_w=model.gate_w,
        gate_b=model.gate_b,
        mlp_hidden_w=model.mlp_hidden_w,
        mlp_hidden_b=model.mlp_hidden_b,
        mlp_out_w=model.mlp_out_w,
        mlp_out_b=model.mlp_out_b,
        dropout_rate=np.float64(model.dropout_rate),
    )


def load_model(path: str) -> GcnModel:
    with np.load(path) as z:
        return GcnModel(
            w1=z["w1"],
            bn1=BatchNorm(z["bn1_gamma"], z["bn1_beta"], z["bn1_running_mean"], z["bn1_running_var"]),
            w2=z["w2"],
            bn2=BatchNorm(z["bn2_gamma"], z["bn2_beta"], z["bn2_running_mean"], z["bn2_running_var"]),
            gate_w=z["gate_w"],
            gate_b=z["gate_b"],
            mlp_hidden_w=z["mlp_hidden_w"],
            mlp_hidden_b=z["mlp_hidden_b"],
            mlp_out_w=z["mlp_out_w"],
            mlp_out_b=z["mlp_out_b"],
            dropout_rate=float(z["dropout_rate"]),
        )
