"""Central-difference oracle for the analytic gradients.

The loss is evaluated with fixed RNG streams, so every evaluation sees the
same dropout masks and the same perturbation noise; the only thing that
varies between evaluations is the single parameter coordinate being probed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import Graph
from ..errors import ContractViolation
from ..rng import substream
from .gcn import GcnModel, named_parameters, normalize_adjacency


@dataclass(frozen=True)
class GradCheckLoss:
    """Loss configuration for a gradient check.

    The first `current_count` graphs form the batch term; the rest act as
    replayed graphs. alpha > 0 enables the consistency term with the given
    perturbation spec.
    """

    seen_classes: tuple[int, ...]
    alpha: float = 0.0
    perturb_spec: object | None = None
    current_count: int | None = None
    seed: int = 0


def finite_diff_check(
    model: GcnModel,
    graphs: Sequence[Graph],
    loss_spec: GradCheckLoss,
    step: float = 1e-5,
    coords_per_param: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    coords_per_param=None probes every coordinate; an integer probes that
    many deterministically sampled coordinates per parameter tensor.

    Each coordinate's numeric derivative is computed at `step` and `step/2`;
    when the two estimates disagree the point sits on a ReLU/argmax kink
    where central differencing is invalid, and the coordinate is skipped. A
    wrong analytic gradient still fails: there the two numeric estimates
    agree with each other while disagreeing with the analytic value.
    """
    if step <= 0:
        raise ContractViolation("step must be positive")
    from ..objective import step_loss, step_loss_and_grads

    graphs = list(graphs)
    n_cur = loss_spec.current_count if loss_spec.current_count is not None else len(graphs)
    if not 1 <= n_cur <= len(graphs):
        raise ContractViolation("current_count out of range")
    current, replay = graphs[:n_cur], graphs[n_cur:]
    ahat_cache = {id(g): normalize_adjacency(g) for g in graphs}

    def loss_value() -> float:
        return step_loss(
            model,
            current,
            replay,
            seen_classes=loss_spec.seen_classes,
            alpha=loss_spec.alpha,
            perturb_spec=loss_spec.perturb_spec,
            rng_dropout=substream(loss_spec.seed, "gc-dropout"),
            rng_perturb=substream(loss_spec.seed, "gc-perturb"),
            ahat_of=lambda g: ahat_cache[id(g)],
        )

    _, grads, _ = step_loss_and_grads(
        model,
        current,
        replay,
        seen_classes=loss_spec.seen_classes,
        alpha=loss_spec.alpha,
        perturb_spec=loss_spec.perturb_spec,
        rng_dropout=substream(loss_spec.seed, "gc-dropout"),
        rng_perturb=substream(loss_spec.seed, "gc-perturb"),
        ahat_of=lambda g: ahat_cache[id(g)],
        update_running=False,
    )

    worst = 0.0
    for name, param in named_parameters(model):
        flat = param.reshape(-1)
        grad_flat = grads[name].reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            coords = range(flat.size)
        else:
            coords = substream(loss_spec.seed, "gc-coords", name).choice(
                flat.size, size=coords_per_param, replace=False
            )
        for j in coords:
            orig = flat[j]

            def central(h: float) -> float:
                flat[j] = orig + h
                up = loss_value()
                flat[j] = orig - h
                down = loss_value()
                flat[j] = orig
                return (up - down) / (2.0 * h)

            numeric = central(step)
            check = central(step / 2.0)
            if abs(numeric - check) / max(abs(numeric), abs(check), 1e-4) > 1e-5:
                continue  # kink inside the probe interval
            analytic = grad_flat[j]
            # floor keeps loss-roundoff noise on near-zero coordinates from
            # masquerading as gradient error; real defects scale with |grad|
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst
