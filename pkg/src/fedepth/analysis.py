"""Evaluation metrics and representation-similarity analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError
from .nn import fastops
from .nn.network import block_forward, head_forward


@dataclass
class EvalReport:
    round: int
    global_accuracy: float
    per_client_accuracy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fairness: float = 0.0


def top1_accuracy(logits, labels):
    """Fraction of rows whose argmax matches the label; logit ties resolve
    to the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise UsageError("cannot score an empty batch")
    if logits.shape[0] != labels.shape[0]:
        raise UsageError(f"{logits.shape[0]} rows vs {labels.shape[0]} labels")
    return float(np.mean(fastops.argmax_rows(logits) == labels))


def fairness_std(per_client_accuracies):
    """Population standard deviation of per-client accuracies."""
    acc = np.asarray(per_client_accuracies, dtype=np.float64)
    if acc.size < 2:
        raise UsageError("fairness needs at least two clients")
    return float(acc.std(ddof=0))


def _center(x):
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=0, keepdims=True)


def linear_cka(x, y):
    """||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) on column-centered
    matrices; in [0, 1], invariant to orthogonal maps and isotropic
    scaling."""
    x, y = _center(x), _center(y)
    if x.shape[0] != y.shape[0]:
        raise UsageError(f"row counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise UsageError("cka needs at least two rows")
    cross = np.linalg.norm(y.T @ x, "fro") ** 2
    nx = np.linalg.norm(x.T @ x, "fro")
    ny = np.linalg.norm(y.T @ y, "fro")
    if nx == 0.0 or ny == 0.0:
        raise UsageError("cka undefined for zero-variance inputs")
    return float(cross / (nx * ny))


def _inv_sqrt(c):
    vals, vecs = np.linalg.eigh(c)
    vals = np.maximum(vals, 1e-12)
    return (vecs / np.sqrt(vals)) @ vecs.T


def mean_cca(x, y, eps=1e-6):
    """Mean of the canonical correlations between the column spaces of x
    and y; covariances get eps on the diagonal for stability."""
    x, y = _center(x), _center(y)
    n, d1 = x.shape
    d2 = y.shape[1]
    if y.shape[0] != n:
        raise UsageError(f"row counts differ: {n} vs {y.shape[0]}")
    if n <= max(d1, d2):
        raise UsageError(f"cca needs more rows ({n}) than columns ({max(d1, d2)})")
    cxx = x.T @ x / (n - 1) + eps * np.eye(d1)
    cyy = y.T @ y / (n - 1) + eps * np.eye(d2)
    cxy = x.T @ y / (n - 1)
    try:
        m = _inv_sqrt(cxx) @ cxy @ _inv_sqrt(cyy)
        sing = np.linalg.svd(m, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"cca decomposition failed: {exc}") from exc
    return float(np.clip(sing, 0.0, 1.0).mean())


def block_representations(graph, weights, x):
    """Flattened per-block activations of x, as float64 (n, features)."""
    reps = []
    z = np.asarray(x)
    for j in range(graph.n_blocks):
        z = block_forward(graph.blocks[j], weights.body[j], z, fastops)
        reps.append(z.reshape(z.shape[0], -1).astype(np.float64))
    return reps


def representation_similarity(graph, weights_a, weights_b, probe_x):
    """Per-block CKA (and CCA where well-posed) between two models on a
    shared probe set."""
    reps_a = block_representations(graph, weights_a, probe_x)
    reps_b = block_representations(graph, weights_b, probe_x)
    rows = []
    for j, (ra, rb) in enumerate(zip(reps_a, reps_b)):
        cka = linear_cka(ra, rb)
        if probe_x.shape[0] > max(ra.shape[1], rb.shape[1]):
            cca = mean_cca(ra, rb)
        else:
            cca = None
        rows.append({"block": j + 1, "cka": cka, "cca": cca})
    return rows


def evaluate_model(graph, weights, x, labels, batch=512):
    """Top-1 accuracy of the model on (x, labels), computed in chunks."""
    correct = 0
    for i in range(0, len(x), batch):
        xb = x[i : i + batch]
        z = xb
        for j in range(graph.n_blocks):
            z = block_forward(graph.blocks[j], weights.body[j], z, fastops)
        logits = head_forward(graph, weights.head, z, fastops)
        correct += int(np.sum(fastops.argmax_rows(logits) == labels[i : i + batch]))
    if len(x) == 0:
        raise UsageError("cannot evaluate on an empty set")
    return correct / len(x)
