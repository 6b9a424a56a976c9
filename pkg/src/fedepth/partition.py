"""Non-IID client shards and desk-scale dataset loaders.

Partition families:
- dirichlet-unbalanced: per class, draw client proportions from
  Dirichlet(lam * 1_K) and split that class's (shuffled) samples
  accordingly. Clients already holding >= n/K samples are excluded from
  subsequent classes' draws, the standard quota cap of this partition
  lineage; shard sizes then vary around n/K.
- dirichlet-balanced: raw per-class Dirichlet assignment (no cap), then
  excess samples move from over-quota to under-quota clients, donors
  giving from their most abundant class first, until every client holds
  n//K samples (the first n mod K clients hold one extra).
- pathological: each client receives exactly labels_per_client distinct
  labels, assigned round-robin from a tiled shuffled label permutation, so
  every class is held by floor or ceil of K*labels/C clients; each class's
  samples split evenly among its holders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

SHARDS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PartitionSpec:
    family: str
    clients: int
    lam: float | None = None  # Dirichlet concentration
    labels_per_client: int | None = None  # pathological
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise UsageError("clients must be >= 1")
        if self.family in ("dirichlet-balanced", "dirichlet-unbalanced"):
            if self.lam is None or self.lam <= 0:
                raise UsageError("Dirichlet families need lam > 0")
            if self.labels_per_client is not None:
                raise UsageError("labels_per_client is a pathological-family parameter")
        elif self.family == "pathological":
            if self.labels_per_client is None or self.labels_per_client < 1:
                raise UsageError("pathological family needs labels_per_client >= 1")
            if self.lam is not None:
                raise UsageError("lam is a Dirichlet-family parameter")
        else:
            raise UsageError(f"unknown partition family {self.family!r}")


@dataclass(frozen=True, eq=False)
class Shard:
    client_id: int
    indices: np.ndarray
    label_histogram: np.ndarray

    @property
    def size(self):
        return int(self.indices.size)


def _make_shards(per_client_indices, labels, n_classes):
    shards = []
    for cid, idx in enumerate(per_client_indices):
        idx = np.asarray(sorted(idx), dtype=np.int64)
        hist = np.bincount(labels[idx], minlength=n_classes)
        shards.append(Shard(client_id=cid, indices=idx, label_histogram=hist))
    return shards


def partition(labels, spec):
    labels = np.asarray(labels)
    if spec.family == "pathological":
        return partition_pathological(labels, spec)
    return partition_dirichlet(labels, spec)


def partition_dirichlet(labels, spec):
    labels = np.asarray(labels)
    n = labels.size
    k = spec.clients
    n_classes = int(labels.max()) + 1
    rng = np.random.default_rng([spec.seed, 101])
    quota = n / k

    assigned = [[] for _ in range(k)]
    for c in range(n_classes):
        class_idx = np.flatnonzero(labels == c)
        if class_idx.size == 0:
            raise UsageError(f"class {c} has no samples")
        rng.shuffle(class_idx)
        props = rng.dirichlet(np.full(k, spec.lam))
        if spec.family == "dirichlet-unbalanced":
            open_mask = np.array([len(a) < quota for a in assigned], dtype=float)
            if open_mask.sum() == 0:
                open_mask[:] = 1.0
            props = props * open_mask
            props = props / props.sum()
        cuts = (np.cumsum(props)[:-1] * class_idx.size).astype(int)
        for cid, chunk in enumerate(np.split(class_idx, cuts)):
            assigned[cid].extend(chunk.tolist())

    if spec.family == "dirichlet-balanced":
        assigned = _rebalance(assigned, labels, n_classes, n, k)
    return _make_shards(assigned, labels, n_classes)


def _rebalance(assigned, labels, n_classes, n, k):
    """Move samples from over-quota to under-quota clients; donors give
    from their most abundant class. First n mod K clients get one extra."""
    quotas = np.full(k, n // k, dtype=int)
    quotas[: n % k] += 1
    by_class = [
        {c: [i for i in idx if labels[i] == c] for c in range(n_classes)} for idx in assigned
    ]
    sizes = np.array([len(a) for a in assigned])
    receivers = [cid for cid in range(k) if sizes[cid] < quotas[cid]]
    ri = 0
    for donor in range(k):
        while sizes[donor] > quotas[donor]:
            counts = by_class[donor]
            c = max(counts, key=lambda cc: (len(counts[cc]), -cc))
            while ri < len(receivers) and sizes[receivers[ri]] >= quotas[receivers[ri]]:
                ri += 1
            recv = receivers[ri]
            moved = min(
                sizes[donor] - quotas[donor],
                quotas[recv] - sizes[recv],
                len(counts[c]),
            )
            chunk = counts[c][-moved:]
            del counts[c][-moved:]
            by_class[recv][c].extend(chunk)
            sizes[donor] -= moved
            sizes[recv] += moved
    return [[i for c in range(n_classes) for i in by_class[cid][c]] for cid in range(k)]


def partition_pathological(labels, spec):
    labels = np.asarray(labels)
    k = spec.clients
    lam_labels = spec.labels_per_client
    n_classes = int(labels.max()) + 1
    if lam_labels > n_classes:
        raise UsageError(f"labels_per_client {lam_labels} exceeds {n_classes} classes")
    if k * lam_labels < n_classes:
        raise UsageError(
            f"{k} clients x {lam_labels} labels cannot cover {n_classes} classes"
        )
    rng = np.random.default_rng([spec.seed, 202])
    perm = rng.permutation(n_classes)
    slots = int(np.ceil(k * lam_labels / n_classes)) * n_classes
    sequence = np.tile(perm, slots // n_classes)[: k * lam_labels]
    client_labels = sequence.reshape(k, lam_labels)

    holders = {c: np.flatnonzero((client_labels == c).any(axis=1)) for c in range(n_classes)}
    assigned = [[] for _ in range(k)]
    for c in range(n_classes):
        class_idx = np.flatnonzero(labels == c)
        rng.shuffle(class_idx)
        for chunk, cid in zip(np.array_split(class_idx, holders[c].size), holders[c]):
            assigned[cid].extend(chunk.tolist())
    return _make_shards(assigned, labels, n_classes)


def export_shards(shards, spec=None):
    doc = {
        "version": SHARDS_FORMAT_VERSION,
        "shards": [
            {"client": s.client_id, "indices": s.indices.tolist()} for s in shards
        ],
    }
    if spec is not None:
        doc["spec"] = {
            "family": spec.family,
            "clients": spec.clients,
            "lam": spec.lam,
            "labels_per_client": spec.labels_per_client,
            "seed": spec.seed,
        }
    return json.dumps(doc)


def import_shards(text, labels):
    doc = json.loads(text)
    if doc.get("version") != SHARDS_FORMAT_VERSION:
        raise UsageError(f"unsupported shards format version {doc.get('version')!r}")
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    per_client = [rec["indices"] for rec in sorted(doc["shards"], key=lambda r: r["client"])]
    return _make_shards(per_client, labels, n_classes)


def label_distribution_rows(shards):
    """(client, class, count) rows with count > 0, for scatter plots."""
    rows = []
    for s in shards:
        for c, count in enumerate(s.label_histogram):
            if count:
                rows.append((s.client_id, c, int(count)))
    return rows


def make_gaussian_mixture(
    classes,
    dim,
    samples,
    components=1,
    separation=3.0,
    noise=1.0,
    seed=0,
    split="train",
    dtype=np.float32,
):
    """Gaussian-mixture classification task; cluster centers depend only on
    (classes, dim, components, separation, seed), so different splits share
    the same distribution."""
    center_rng = np.random.default_rng([seed, 11])
    centers = center_rng.standard_normal((classes, components, dim))
    centers *= separation / np.sqrt(dim)
    sample_rng = np.random.default_rng([seed, 13 if split == "train" else 17])
    y = sample_rng.integers(0, classes, size=samples)
    comp = sample_rng.integers(0, components, size=samples)
    x = centers[y, comp] + noise * sample_rng.standard_normal((samples, dim))
    return x.astype(dtype), y.astype(np.int64)


def load_small_image_set(path, dtype=np.float32):
    """Load an .npz with arrays 'images' (n,c,h,w) and 'labels' (n,)."""
    try:
        with np.load(path) as data:
            images, labels = data["images"], data["labels"]
    except FileNotFoundError:
        raise UsageError(
            f"dataset file {path!r} not found; provide an .npz archive with "
            "arrays 'images' (n,c,h,w) and 'labels' (n,)"
        ) from None
    except (KeyError, ValueError) as exc:
        raise UsageError(f"dataset file {path!r} is not a valid image archive: {exc}") from exc
    images = np.asarray(images, dtype=dtype)
    if images.max() > 1.0:
        images = images / 255.0
    return images, np.asarray(labels, dtype=np.int64)


def load_dataset(name, options):
    """Dispatch on dataset name; returns (x, y), deterministic under seed."""
    if name == "synthetic-gaussian-mixture":
        return make_gaussian_mixture(**options)
    if name == "small-image-set":
        return load_small_image_set(**options)
    raise UsageError(f"unknown dataset {name!r}")
