"""Training-step objective: masked cross-entropy on the current batch, replay
cross-entropy over the stored graphs, and the embedding-consistency term.

One optimizer step sees the current batch and every replayed graph in a
single train-mode forward (so batch-norm statistics cover all of them), plus
a second forward over freshly perturbed copies when the consistency weight
is positive. Both passes contribute gradients to the shared parameters.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .data import Graph
from .errors import ContractViolation
from .nn.gcn import (
    MLP_HIDDEN_DIM,
    backward_batch,
    forward_batch,
    masked_log_softmax,
    masked_softmax,
    seen_mask,
)
from .perturb import PerturbSpec, perturb_features


def step_loss_and_grads(
    model,
    current: Sequence[Graph],
    replay: Sequence[Graph],
    *,
    seen_classes,
    alpha: float,
    perturb_spec: PerturbSpec | None,
    rng_dropout: np.random.Generator | None,
    rng_perturb: np.random.Generator | None,
    ahat_of: Callable[[Graph], np.ndarray],
    update_running: bool = True,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Loss, exact gradients, and per-term breakdown for one step.

    Term weights: 1/|current| on the batch, 1/|replay| over all replayed
    graphs, and alpha * 1/(|current|+|replay|) on the consistency MSE.
    """
    if not current:
        raise ContractViolation("training step needs a non-empty current batch")
    if alpha > 0 and perturb_spec is None:
        raise ContractViolation("consistency loss needs a perturbation spec")

    graphs = list(current) + list(replay)
    labels = [g.label for g in graphs]
    mask = seen_mask(model.class_count, seen_classes)
    for g in graphs:
        if not mask[g.label]:
            raise ContractViolation(f"graph label {g.label} not in seen classes")

    feats = [g.features for g in graphs]
    ahats = [ahat_of(g) for g in graphs]
    logits, cache = forward_batch(
        model, feats, ahats, mode="train", rng=rng_dropout, update_running=update_running
    )

    n_cur, n_rep = len(current), len(replay)
    weights = np.concatenate(
        [np.full(n_cur, 1.0 / n_cur), np.full(n_rep, 1.0 / n_rep) if n_rep else []]
    )
    log_p = masked_log_softmax(logits, mask)
    ce_each = -log_p[np.arange(len(graphs)), labels]
    task_ce = float(ce_each[:n_cur].mean())
    replay_ce = float(ce_each[n_cur:].sum() / n_rep) if n_rep else 0.0

    probs = masked_softmax(logits, mask)
    d_logits = probs.copy()
    d_logits[np.arange(len(graphs)), labels] -= 1.0
    d_logits *= weights[:, None]

    consistency = 0.0
    if alpha > 0:
        pert_feats = [perturb_features(f, perturb_spec, rng_perturb) for f in feats]
        _, pert_cache = forward_batch(
            model, pert_feats, ahats, mode="train", rng=rng_dropout, update_running=False
        )
        diff = cache.latent_h - pert_cache.latent_h
        consistency = float(alpha * np.mean(diff * diff))
        # d/dh of alpha * mean_graphs(mean_dims((h - h_pert)^2))
        scale = alpha * 2.0 / (len(graphs) * MLP_HIDDEN_DIM)
        d_latent = scale * diff
        grads = backward_batch(model, cache, d_logits, d_latent)
        pert_grads = backward_batch(model, pert_cache, np.zeros_like(d_logits), -d_latent)
        for name in grads:
            grads[name] += pert_grads[name]
    else:
        grads = backward_batch(model, cache, d_logits)

    total = task_ce + replay_ce + consistency
    parts = {"task_ce": task_ce, "replay_ce": replay_ce, "consistency": consistency}
    return total, grads, parts


def step_loss(
    model,
    current: Sequence[Graph],
    replay: Sequence[Graph],
    *,
    seen_classes,
    alpha: float,
    perturb_spec: PerturbSpec | None,
    rng_dropout: np.random.Generator | None,
    rng_perturb: np.random.Generator | None,
    ahat_of: Callable[[Graph], np.ndarray],
) -> float:
    """Loss value only (forward passes, no gradient work)."""
    graphs = list(current) + list(replay)
    mask = seen_mask(model.class_count, seen_classes)
    feats = [g.features for g in graphs]
    ahats = [ahat_of(g) for g in graphs]
    logits, cache = forward_batch(
        model, feats, ahats, mode="train", rng=rng_dropout, update_running=False
    )
    labels = [g.label for g in graphs]
    log_p = masked_log_softmax(logits, mask)
    ce_each = -log_p[np.arange(len(graphs)), labels]
    n_cur, n_rep = len(current), len(replay)
    total = float(ce_each[:n_cur].mean())
    if n_rep:
        total += float(ce_each[n_cur:].sum() / n_rep)
    if alpha > 0:
        pert_feats = [perturb_features(f, perturb_spec, rng_perturb) for f in feats]
        _, pert_cache = forward_batch(
            model, pert_feats, ahats, mode="train", rng=rng_dropout, update_running=False
        )
        diff = cache.latent_h - pert_cache.latent_h
        total += float(alpha * np.mean(diff * diff))
    return total
