"""Classification losses on taped Tensors."""

import numpy as np

from ..errors import UsageError
from . import autograd as ag


def cross_entropy(logits, labels):
    """Mean negative log softmax probability of the true class."""
    logits = ag.as_tensor(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise UsageError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise UsageError(f"label out of range for {c} classes")
    lse = ag.logsumexp(logits)  # (n, 1)
    true_logit = ag.take_rows(logits, labels)  # (n,)
    per_sample = ag.add(ag.reshape(lse, (n,)), ag.mul(true_logit, -1.0))
    return ag.mean_all(per_sample)


def kl_logits(hp, h):
    """Per-sample mean of KL(softmax(hp_i) || softmax(h_i)).

    Gradients flow through both arguments.
    """
    hp, h = ag.as_tensor(hp), ag.as_tensor(h)
    if hp.shape != h.shape:
        raise UsageError(f"logit batches differ in shape: {hp.shape} vs {h.shape}")
    n = hp.shape[0]
    log_p = ag.add(hp, ag.mul(ag.logsumexp(hp), -1.0))
    log_q = ag.add(h, ag.mul(ag.logsumexp(h), -1.0))
    p = ag.exp(log_p)
    per_elem = ag.mul(p, ag.add(log_p, ag.mul(log_q, -1.0)))
    return ag.mul(ag.tsum(per_elem), 1.0 / n)
