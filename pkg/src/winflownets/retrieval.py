"""Retrieval network: predicts the parent state s_{t-1} from (s_t, a_{t-1})."""

import numpy as np

from .nn import apply_update, backward_cached, forward_cached, mlp_forward


def predict_parent(params, s, a_prev):
    s = np.asarray(s, dtype=np.float64)
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if s.ndim == 1:
        return mlp_forward(params, np.concatenate([s, a_prev]))
    return mlp_forward(params, np.hstack([s, a_prev]))


def retrieval_loss(params, batch):
    """Mean squared parent-prediction error over batch and state dimensions, with its gradient."""
    X = np.hstack([batch.s, batch.a_prev])
    pred, cache = forward_cached(params, X)
    err = pred - batch.s_prev
    loss = float(np.mean(err * err))
    grad = backward_cached(params, cache, 2.0 * err / err.size)
    return loss, grad


def pretrain_retrieval(net, dataset, epochs, lr, rng, batch_size=256):
    """Minimise the retrieval loss over a fixed dataset (a ``Batch``).

    Returns the per-epoch mean training loss; ``net`` is updated in place.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("pretraining dataset is empty")
    curve = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            sub = type(dataset)(*(getattr(dataset, f)[idx] for f in dataset.__dataclass_fields__))
            loss, grad = retrieval_loss(net.params, sub)
            apply_update(net, grad, lr)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return curve
