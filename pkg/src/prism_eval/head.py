"""Projection head: two-layer ReLU MLP producing unit-norm embeddings.

The head maps pooled raw features to a compact embedding that is normalized
to unit length.  It is trained with a margin triplet loss where each sample
is weighted by its negative's mask weight, using hand-derived gradients and
a decoupled-weight-decay Adam update.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_io import (
    ContractError,
    CorruptionError,
    DataError,
    EmbeddingSet,
    FeatureVector,
    FormatError,
    FORMAT_VERSION,
    Manifest,
)

PRSH_MAGIC = b"PRSH"

DEGENERATE_NORM = 1e-12

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class DegenerateNormError(ValueError):
    """Pre-normalization output collapsed to (near-)zero length."""


class EmptyTripletPoolError(ValueError):
    """No usable (anchor, positive, negative) triplets could be formed."""


@dataclass
class MlpHead:
    """Parameters of the two-layer projection MLP (float64 in memory)."""

    w1: np.ndarray  # (hidden, in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out, hidden)
    b2: np.ndarray  # (out,)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise DataError("weight matrices must be 2-D")
        if self.b1.shape != (self.w1.shape[0],) or self.b2.shape != (self.w2.shape[0],):
            raise DataError("bias shapes must match weight rows")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise DataError("layer dimensions are inconsistent")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"parameter {name} contains non-finite values")

    @property
    def in_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.w2.shape[0])

    def copy(self) -> "MlpHead":
        return MlpHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    @classmethod
    def initialize(
        cls,
        in_dim: int,
        hidden_dim: int = 2048,
        out_dim: int = 2048,
        seed: int | np.random.Generator = 0,
    ) -> "MlpHead":
        """He-style scaled-uniform fan-in init; biases small uniform.

        Nonzero biases keep the pre-normalization output away from zero even
        when an input deactivates the whole hidden layer.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / in_dim)
        lim2 = np.sqrt(6.0 / hidden_dim)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(hidden_dim, in_dim)),
            b1=rng.uniform(-1.0, 1.0, size=hidden_dim) / np.sqrt(in_dim),
            w2=rng.uniform(-lim2, lim2, size=(out_dim, hidden_dim)),
            b2=rng.uniform(-1.0, 1.0, size=out_dim) / np.sqrt(hidden_dim),
        )


@dataclass(frozen=True)
class TrainConfig:
    """Training recipe for the projection head."""

    margin: float = 1.0
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    negative_skip_threshold: float = 0.05
    seed: int = 0
    early_stop_patience: int = 10
    hidden_dim: int = 2048
    out_dim: int = 2048
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if not self.margin > 0:
            raise DataError("margin must be positive")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not 0.0 <= self.negative_skip_threshold < 1.0:
            raise DataError("negative_skip_threshold must be in [0, 1)")
        if self.epochs < 0 or self.early_stop_patience < 0:
            raise DataError("epochs and early_stop_patience must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise DataError("val_fraction must be in (0, 1)")


@dataclass
class HeadGradients:
    """Gradient buffers mirroring MlpHead shapes."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, head: MlpHead) -> "HeadGradients":
        return cls(
            np.zeros_like(head.w1),
            np.zeros_like(head.b1),
            np.zeros_like(head.w2),
            np.zeros_like(head.b2),
        )


@dataclass
class OptimizerState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, head: MlpHead) -> "OptimizerState":
        return cls(
            m={n: np.zeros_like(getattr(head, n)) for n in PARAM_NAMES},
            v={n: np.zeros_like(getattr(head, n)) for n in PARAM_NAMES},
        )


def _forward_batch(head: MlpHead, v: np.ndarray):
    """Run (B, C) raw features through the head; returns embeddings + cache."""
    z1 = v @ head.w1.T + head.b1
    r = np.maximum(z1, 0.0)
    h = r @ head.w2.T + head.b2
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        raise DegenerateNormError(
            "pre-normalization output has near-zero norm (collapsed head)"
        )
    f = h / norms[:, None]
    return f, (v, z1, r, norms)


def forward(head: MlpHead, v: FeatureVector | np.ndarray) -> FeatureVector:
    """Project one raw feature to the unit-norm embedding."""
    arr = np.asarray(getattr(v, "values", v), dtype=np.float64).reshape(-1)
    if arr.size != head.in_dim:
        raise ContractError(f"input dim {arr.size} != head in_dim {head.in_dim}")
    f, _ = _forward_batch(head, arr[None, :])
    return FeatureVector(f[0].astype(np.float32), unit_norm=True)


def apply_head(head: MlpHead, features: EmbeddingSet, role: str = "generated") -> EmbeddingSet:
    """Project every row of a raw feature set; rows come out unit-norm."""
    if features.dim != head.in_dim:
        raise ContractError(f"feature dim {features.dim} != head in_dim {head.in_dim}")
    f, _ = _forward_batch(head, features.rows.astype(np.float64))
    return EmbeddingSet(f.astype(np.float32), role=role)


def triplet_loss(
    a: FeatureVector | np.ndarray,
    p: FeatureVector | np.ndarray,
    n: FeatureVector | np.ndarray,
    margin: float,
) -> float:
    """Margin hinge on embedding distances: max(d(a,p) - d(a,n) + m, 0)."""
    av = np.asarray(getattr(a, "values", a), dtype=np.float64).reshape(-1)
    pv = np.asarray(getattr(p, "values", p), dtype=np.float64).reshape(-1)
    nv = np.asarray(getattr(n, "values", n), dtype=np.float64).reshape(-1)
    if not av.size == pv.size == nv.size:
        raise ContractError("triplet members must share one dimension")
    d_ap = float(np.linalg.norm(av - pv))
    d_an = float(np.linalg.norm(av - nv))
    return max(d_ap - d_an + float(margin), 0.0)


def _safe_unit(diff: np.ndarray, dist: np.ndarray) -> np.ndarray:
    # direction of a distance term; zero where the distance vanishes
    safe = np.where(dist < DEGENERATE_NORM, 1.0, dist)
    out = diff / safe[:, None]
    out[dist < DEGENERATE_NORM] = 0.0
    return out


def backward(
    head: MlpHead,
    batch: list[tuple[np.ndarray, np.ndarray, np.ndarray, float]],
    margin: float,
) -> tuple[HeadGradients, float]:
    """Gradients of the weighted mean triplet loss over one batch.

    The mean uses the batch size as a fixed denominator, so scaling all
    weights scales the gradients by the same factor.  The hinge uses the
    active-branch gradient at the kink; the unit-normalization Jacobian is
    handled per sample.
    """
    size = len(batch)
    if size < 1:
        raise ContractError("batch must contain at least one triplet")
    a_raw = np.stack([np.asarray(t[0], dtype=np.float64).reshape(-1) for t in batch])
    p_raw = np.stack([np.asarray(t[1], dtype=np.float64).reshape(-1) for t in batch])
    n_raw = np.stack([np.asarray(t[2], dtype=np.float64).reshape(-1) for t in batch])
    wts = np.asarray([t[3] for t in batch], dtype=np.float64)
    if a_raw.shape[1] != head.in_dim:
        raise ContractError(f"raw dim {a_raw.shape[1]} != head in_dim {head.in_dim}")
    if np.any(wts < 0.0) or np.any(wts > 1.0):
        raise ContractError("triplet weights must be in [0, 1]")

    f_a, cache_a = _forward_batch(head, a_raw)
    f_p, cache_p = _forward_batch(head, p_raw)
    f_n, cache_n = _forward_batch(head, n_raw)

    diff_ap = f_a - f_p
    diff_an = f_a - f_n
    d_ap = np.linalg.norm(diff_ap, axis=1)
    d_an = np.linalg.norm(diff_an, axis=1)
    expr = d_ap - d_an + float(margin)
    active = expr >= 0.0
    mean_loss = float(np.sum(np.maximum(expr, 0.0) * wts) / size)

    scale = np.where(active, wts, 0.0)[:, None] / size
    u_ap = _safe_unit(diff_ap, d_ap)
    u_an = _safe_unit(diff_an, d_an)
    g_fa = scale * (u_ap - u_an)
    g_fp = -scale * u_ap
    g_fn = scale * u_an

    grads = HeadGradients.zeros_like(head)
    for f, cache, gf in ((f_a, cache_a, g_fa), (f_p, cache_p, g_fp), (f_n, cache_n, g_fn)):
        v, z1, r, norms = cache
        # pull gf back through f = h / ||h||
        gh = (gf - f * np.sum(gf * f, axis=1, keepdims=True)) / norms[:, None]
        grads.w2 += gh.T @ r
        grads.b2 += gh.sum(axis=0)
        gz1 = (gh @ head.w2) * (z1 > 0.0)
        grads.w1 += gz1.T @ v
        grads.b1 += gz1.sum(axis=0)
    return grads, mean_loss


def batch_loss(
    head: MlpHead,
    batch: list[tuple[np.ndarray, np.ndarray, np.ndarray, float]],
    margin: float,
) -> float:
    """Weighted mean triplet loss only (no gradients)."""
    size = len(batch)
    a_raw = np.stack([np.asarray(t[0], dtype=np.float64).reshape(-1) for t in batch])
    p_raw = np.stack([np.asarray(t[1], dtype=np.float64).reshape(-1) for t in batch])
    n_raw = np.stack([np.asarray(t[2], dtype=np.float64).reshape(-1) for t in batch])
    wts = np.asarray([t[3] for t in batch], dtype=np.float64)
    f_a, _ = _forward_batch(head, a_raw)
    f_p, _ = _forward_batch(head, p_raw)
    f_n, _ = _forward_batch(head, n_raw)
    expr = (
        np.linalg.norm(f_a - f_p, axis=1)
        - np.linalg.norm(f_a - f_n, axis=1)
        + float(margin)
    )
    return float(np.sum(np.maximum(expr, 0.0) * wts) / size)


def adamw_step(
    head: MlpHead,
    grads: HeadGradients,
    state: OptimizerState,
    cfg: TrainConfig,
) -> tuple[MlpHead, OptimizerState]:
    """One bias-corrected Adam update with decoupled decay on weights only."""
    state.step += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.step
    bc2 = 1.0 - cfg.adam_beta2 ** state.step
    for name in PARAM_NAMES:
        p = getattr(head, name)
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * g * g
        update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        if cfg.weight_decay > 0.0 and name in ("w1", "w2"):
            update = update + cfg.learning_rate * cfg.weight_decay * p
        p -= update
    return head, state


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TripletIndex:
    """Indices into the raw-feature rows for one training triplet."""

    anchor: int
    positive: int
    negative: int
    weight: float


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    val_loss: float


def format_training_log(log: list[TrainLogEntry]) -> str:
    lines = ["epoch train_loss val_loss"]
    for e in log:
        val = f"{e.val_loss:.6f}" if np.isfinite(e.val_loss) else "nan"
        lines.append(f"{e.epoch} {e.train_loss:.6f} {val}")
    return "\n".join(lines) + "\n"


def build_triplet_pool(
    manifest: Manifest,
    skip_threshold: float,
) -> tuple[list[TripletIndex], list[tuple[str, tuple[float, float, float]]]]:
    """Form all (anchor, positive, negative) combinations per anchor group.

    Records sharing (source_id, relative pose) form one group; the group's
    ground-truth record is the anchor.  Negatives below the skip threshold
    are dropped; positives are always retained.  Returns the pool plus the
    ordered list of group keys that produced at least one triplet.
    """
    groups: dict[tuple[str, tuple[float, float, float]], dict[str, list[int]]] = {}
    order: list[tuple[str, tuple[float, float, float]]] = []
    for idx, rec in enumerate(manifest.records):
        gkey = (rec.source_id, rec.pose.key())
        if gkey not in groups:
            groups[gkey] = {"anchor": [], "positive": [], "negative": []}
            order.append(gkey)
        if rec.label == "ground_truth":
            groups[gkey]["anchor"].append(idx)
        elif rec.label == "positive":
            groups[gkey]["positive"].append(idx)
        else:
            if rec.weight >= skip_threshold:
                groups[gkey]["negative"].append(idx)
    pool: list[TripletIndex] = []
    used: list[tuple[str, tuple[float, float, float]]] = []
    record_weight = {i: rec.weight for i, rec in enumerate(manifest.records)}
    for gkey in order:
        grp = groups[gkey]
        if not (grp["anchor"] and grp["positive"] and grp["negative"]):
            continue
        used.append(gkey)
        for a in grp["anchor"]:
            for p in grp["positive"]:
                for n in grp["negative"]:
                    pool.append(TripletIndex(a, p, n, record_weight[n]))
    return pool, used


def _pool_batches(
    feats: np.ndarray, pool: list[TripletIndex], order: np.ndarray, batch_size: int
):
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        yield [
            (feats[pool[i].anchor], feats[pool[i].positive], feats[pool[i].negative], pool[i].weight)
            for i in chunk
        ]


def train_head(
    manifest: Manifest,
    raw_features: EmbeddingSet,
    cfg: TrainConfig,
    val_manifest: Manifest | None = None,
    val_features: EmbeddingSet | None = None,
) -> tuple[MlpHead, list[TrainLogEntry]]:
    """Train the projection head on manifest-aligned raw features.

    ``raw_features`` rows correspond one-to-one with ``manifest.records``.
    When no explicit validation manifest is given and early stopping is
    enabled, a seeded 10% of anchor groups is held out.  Deterministic for a
    fixed seed in single-threaded mode.
    """
    if raw_features.count != len(manifest.records):
        raise ContractError(
            f"feature rows ({raw_features.count}) != manifest records "
            f"({len(manifest.records)})"
        )
    rng = np.random.default_rng(cfg.seed)
    head = MlpHead.initialize(raw_features.dim, cfg.hidden_dim, cfg.out_dim, seed=rng)

    pool, group_keys = build_triplet_pool(manifest, cfg.negative_skip_threshold)
    if not pool:
        raise EmptyTripletPoolError(
            "no trainable triplets (check labels and skip threshold)"
        )
    feats = raw_features.rows.astype(np.float64)

    val_pool: list[TripletIndex] = []
    val_feats = feats
    train_pool = pool
    if val_manifest is not None:
        if val_features is None or val_features.count != len(val_manifest.records):
            raise ContractError("val manifest needs aligned val features")
        val_pool, _ = build_triplet_pool(val_manifest, cfg.negative_skip_threshold)
        val_feats = val_features.rows.astype(np.float64)
    elif cfg.early_stop_patience > 0:
        n_val = max(1, int(round(cfg.val_fraction * len(group_keys))))
        if n_val >= len(group_keys):
            raise EmptyTripletPoolError(
                "not enough anchor groups to hold out a validation split; "
                "pass a val manifest or set early_stop_patience=0"
            )
        perm = rng.permutation(len(group_keys))
        held = {group_keys[i] for i in perm[:n_val]}
        key_of = {
            i: (manifest.records[t.anchor].source_id, manifest.records[t.anchor].pose.key())
            for i, t in enumerate(pool)
        }
        train_pool = [t for i, t in enumerate(pool) if key_of[i] not in held]
        val_pool = [t for i, t in enumerate(pool) if key_of[i] in held]
        if not train_pool:
            raise EmptyTripletPoolError("validation holdout left no training triplets")

    log: list[TrainLogEntry] = []
    if cfg.epochs == 0:
        return head, log

    state = OptimizerState.zeros(head)
    best_head = head.copy()
    best_val = np.inf
    stale = 0
    use_early = cfg.early_stop_patience > 0 and len(val_pool) > 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_pool))
        total = 0.0
        for batch in _pool_batches(feats, train_pool, order, cfg.batch_size):
            grads, loss = backward(head, batch, cfg.margin)
            adamw_step(head, grads, state, cfg)
            total += loss * len(batch)
        train_loss = total / len(train_pool)
        if val_pool:
            vb = [
                (val_feats[t.anchor], val_feats[t.positive], val_feats[t.negative], t.weight)
                for t in val_pool
            ]
            val_loss = batch_loss(head, vb, cfg.margin)
        else:
            val_loss = float("nan")
        log.append(TrainLogEntry(epoch, train_loss, val_loss))
        if use_early:
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_head = head.copy()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    return best_head, log
    return (best_head if use_early and np.isfinite(best_val) else head), log


# ---------------------------------------------------------------------------
# PRSH head files: magic | version u32 | in u32 | hidden u32 | out u32
#                  | w1 | b1 | w2 | b2 as row-major little-endian float32


def write_head_file(head: MlpHead, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(PRSH_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, head.in_dim, head.hidden_dim, head.out_dim))
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(head, name), dtype="<f4").tobytes())


def read_head_file(path: str | Path) -> MlpHead:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != PRSH_MAGIC:
        raise FormatError(f"{path}: not a PRSH file (bad magic)")
    version, c, h, d = struct.unpack_from("<IIII", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported PRSH version {version}")
    if min(c, h, d) < 1:
        raise FormatError(f"{path}: zero dimension in header")
    sizes = (h * c, h, d * h, d)
    shapes = ((h, c), (h,), (d, h), (d,))
    expect = 20 + 4 * sum(sizes)
    if len(data) != expect:
        raise CorruptionError(f"{path}: expected {expect} bytes, found {len(data)}")
    off = 20
    params = []
    for n, shape in zip(sizes, shapes):
        params.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape))
        off += 4 * n
    return MlpHead(*params)
