"""Learnable fusion head: optional attention pooling over token grids,
feature concatenation, a two-layer MLP scored per key-frame index, average
pooling to a video score, and correlation-loss training with hand-derived
gradients (64-bit throughout).

Concatenation order follows the registry's role order: spatial, temporal,
per-frame quality sources, whole-video sources; per-video sources broadcast
to every key-frame index.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, FeatureError, TrainingError
from .features import FeatureBundle, SourceRegistry

EPS_NORM = 1e-8  # stabilizer added to each norm in the correlation loss

CHECKPOINT_MAGIC = b"RQVC"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Layout


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    dim: int
    granularity: str
    token_count: int = 0


@dataclass(frozen=True)
class ConcatLayout:
    """Ordered segment map of the fused per-index feature vector."""

    entries: tuple[LayoutEntry, ...]

    @property
    def total_dim(self) -> int:
        return sum(e.dim for e in self.entries)

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for e in self.entries:
            out[e.name] = slice(start, start + e.dim)
            start += e.dim
        return out

    def token_entry(self) -> LayoutEntry | None:
        tokens = [e for e in self.entries if e.granularity == "tokens"]
        if len(tokens) > 1:
            raise TrainingError("at most one token-grid source is supported")
        return tokens[0] if tokens else None

    @classmethod
    def from_registry(cls, registry: SourceRegistry) -> "ConcatLayout":
        entries = tuple(
            LayoutEntry(s.name, s.dim, s.granularity, s.token_count)
            for s in registry.in_role_order())
        return cls(entries=entries)


# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class MhsaPool:
    """Multi-head self-attention with mean pooling over tokens.

    wq/wk/wv have shape (heads, d, d_head); wo is (d, d). No biases.
    """

    head_count: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def dim(self) -> int:
        return self.wo.shape[0]


@dataclass
class MlpHead:
    """Two-layer regression head: w2 . act(w1^T f + b1) + b2."""

    w1: np.ndarray  # (total_dim, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    activation: str = "relu"


@dataclass
class FusionHead:
    layout: ConcatLayout
    mlp: MlpHead
    pool: MhsaPool | None = None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 6
    epochs: int = 30
    lr_decay_factor: float = 10.0
    lr_decay_epoch: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "plcc"        # or "mse"
    hidden: int = 128
    activation: str = "relu"
    mhsa_heads: int = 8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")
        for name in ("batch_size", "epochs", "hidden", "mhsa_heads"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be >= 1")
        if self.lr_decay_factor <= 0 or self.eps <= 0:
            raise TrainingError("lr_decay_factor and eps must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise TrainingError("adam betas must lie in [0, 1)")
        if self.lr_decay_epoch > self.epochs:
            raise TrainingError("lr_decay_epoch must be <= epochs")
        if self.loss not in ("plcc", "mse"):
            raise TrainingError(f"unknown loss {self.loss!r}")
        if self.activation not in _ACTIVATIONS:
            raise TrainingError(f"unknown activation {self.activation!r}")


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_prime(z):
    return (z > 0.0).astype(np.float64)


def _tanh_prime(z):
    return 1.0 - np.tanh(z) ** 2


_ACTIVATIONS = {"relu": (_relu, _relu_prime), "tanh": (np.tanh, _tanh_prime)}


# ---------------------------------------------------------------------------
# Forward ops


def mhsa_pool(tokens: np.ndarray, pool: MhsaPool) -> np.ndarray:
    """Scaled dot-product self-attention over T tokens, then mean over T."""
    out, _ = _mhsa_forward(tokens, pool)
    return out


def _mhsa_forward(tokens: np.ndarray, pool: MhsaPool):
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != pool.dim:
        raise TrainingError(
            f"token grid {x.shape} does not match attention dim {pool.dim}")
    if not np.all(np.isfinite(x)):
        raise TrainingError("non-finite token grid")
    d_head = pool.wq.shape[2]
    scale = 1.0 / np.sqrt(d_head)
    heads = []
    cache = []
    for h in range(pool.head_count):
        q = x @ pool.wq[h]
        k = x @ pool.wk[h]
        v = x @ pool.wv[h]
        scores = (q @ k.T) * scale
        scores -= scores.max(axis=1, keepdims=True)  # stable softmax
        e = np.exp(scores)
        attn = e / e.sum(axis=1, keepdims=True)
        heads.append(attn @ v)
        cache.append((q, k, v, attn))
    concat = np.concatenate(heads, axis=1)
    y = concat @ pool.wo
    return y.mean(axis=0), (x, concat, cache, scale)


def _mhsa_backward(grad_pooled: np.ndarray, pool: MhsaPool, cache, grads):
    """Accumulate wq/wk/wv/wo gradients for one token grid."""
    x, concat, head_cache, scale = cache
    t = x.shape[0]
    d_head = pool.wq.shape[2]
    dy = np.repeat(grad_pooled[None, :] / t, t, axis=0)
    grads["wo"] += concat.T @ dy
    dconcat = dy @ pool.wo.T
    for h in range(pool.head_count):
        q, k, v, attn = head_cache[h]
        dhead = dconcat[:, h * d_head:(h + 1) * d_head]
        dattn = dhead @ v.T
        dv = attn.T @ dhead
        # softmax Jacobian row-wise: a * (g - (a . g))
        dscores = attn * (dattn - (attn * dattn).sum(axis=1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.T @ q * scale
        grads["wq"][h] += x.T @ dq
        grads["wk"][h] += x.T @ dk
        grads["wv"][h] += x.T @ dv


def concat_features(bundle: FeatureBundle, layout: ConcatLayout, i: int,
                    pool: MhsaPool | None = None) -> np.ndarray:
    """Fused feature vector for key-frame index i, segments in layout order."""
    if not 0 <= i < bundle.n_keyframes:
        raise FeatureError(
            f"index {i} out of range for N_z={bundle.n_keyframes}")
    parts = []
    for entry in layout.entries:
        if entry.name not in bundle.matrices:
            raise FeatureError(f"missing source {entry.name!r}")
        mat = bundle.matrices[entry.name]
        if entry.granularity == "video":
            parts.append(mat[0])
        elif entry.granularity == "tokens":
            if pool is None:
                raise TrainingError(
                    f"source {entry.name!r} is a token grid and needs an "
                    f"attention pool")
            tok = mat.reshape(bundle.n_keyframes, entry.token_count, entry.dim)
            parts.append(mhsa_pool(tok[i], pool))
        else:
            parts.append(mat[i])
    return np.concatenate(parts)


def mlp_forward(f: np.ndarray, head: MlpHead) -> float:
    """Scalar score for one fused feature vector."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise TrainingError("non-finite feature vector")
    if f.shape != (head.w1.shape[0],):
        raise TrainingError(
            f"feature vector {f.shape} does not match head input "
            f"({head.w1.shape[0]},)")
    act, _ = _ACTIVATIONS[head.activation]
    return float(head.w2 @ act(head.w1.T @ f + head.b1) + head.b2)


def pool_scores(scores) -> float:
    """Arithmetic mean of per-index scores."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise TrainingError("cannot pool an empty score list")
    if not np.all(np.isfinite(s)):
        raise TrainingError("non-finite scores")
    return float(s.mean())


def video_forward(bundle: FeatureBundle, head: FusionHead) -> float:
    """Predicted quality score for one video: fuse, score, average."""
    scores = [mlp_forward(concat_features(bundle, head.layout, i, head.pool),
                          head.mlp)
              for i in range(bundle.n_keyframes)]
    return pool_scores(scores)


# ---------------------------------------------------------------------------
# Losses


def _loss_pair(pred, target):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size != t.size:
        raise TrainingError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < 2:
        raise TrainingError("correlation loss needs at least 2 samples")
    return p, t


def plcc_loss(pred, target) -> float:
    """(1 - centered correlation) / 2, norms stabilized by EPS_NORM."""
    p, t = _loss_pair(pred, target)
    a = p - p.mean()
    b = t - t.mean()
    rho = (a @ b) / ((np.linalg.norm(a) + EPS_NORM)
                     * (np.linalg.norm(b) + EPS_NORM))
    return float((1.0 - rho) / 2.0)


def plcc_loss_grad(pred, target) -> np.ndarray:
    """Analytical d(plcc_loss)/d(pred); orthogonal to the all-ones vector."""
    p, t = _loss_pair(pred, target)
    a = p - p.mean()
    b = t - t.mean()
    norm_a = np.linalg.norm(a)
    na = norm_a + EPS_NORM
    nb = np.linalg.norm(b) + EPS_NORM
    s = a @ b
    drho_da = b / (na * nb) - (s / (na * na * nb)) * (a / max(norm_a, 1e-300))
    drho_dp = drho_da - drho_da.mean()  # centering Jacobian
    return -0.5 * drho_dp


def mse_loss(pred, target) -> float:
    p, t = _loss_pair(pred, target)
    return float(np.mean((p - t) ** 2))


def mse_loss_grad(pred, target) -> np.ndarray:
    p, t = _loss_pair(pred, target)
    return 2.0 * (p - t) / p.size


_LOSSES = {"plcc": (plcc_loss, plcc_loss_grad),
           "mse": (mse_loss, mse_loss_grad)}


# ---------------------------------------------------------------------------
# Backprop


def _zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def _head_from_params(layout, params, activation, heads):
    mlp = MlpHead(w1=params["w1"], b1=params["b1"], w2=params["w2"],
                  b2=float(np.asarray(params["b2"]).item()),
                  activation=activation)
    pool = None
    if "wo" in params:
        pool = MhsaPool(head_count=heads, wq=params["wq"], wk=params["wk"],
                        wv=params["wv"], wo=params["wo"])
    return FusionHead(layout=layout, mlp=mlp, pool=pool)


def params_from_head(head: FusionHead) -> dict[str, np.ndarray]:
    params = {"w1": head.mlp.w1, "b1": head.mlp.b1, "w2": head.mlp.w2,
              "b2": np.asarray(head.mlp.b2, dtype=np.float64)}
    if head.pool is not None:
        params.update({"wq": head.pool.wq, "wk": head.pool.wk,
                       "wv": head.pool.wv, "wo": head.pool.wo})
    return params


def backprop(batch, head: FusionHead, loss: str = "plcc"):
    """Loss and exact parameter gradients for one mini-batch.

    batch is a sequence of (FeatureBundle, mos). Gradients flow through the
    score averaging, the MLP, and the attention pool when one is present.
    """
    loss_fn, loss_grad_fn = _LOSSES[loss]
    act, act_prime = _ACTIVATIONS[head.mlp.activation]
    layout, mlp, pool = head.layout, head.mlp, head.pool
    token = layout.token_entry()
    token_slice = layout.slices()[token.name] if token else None

    preds = np.empty(len(batch))
    targets = np.empty(len(batch))
    caches = []
    for vi, (bundle, mos) in enumerate(batch):
        n_z = bundle.n_keyframes
        feats = np.empty((n_z, layout.total_dim))
        mhsa_caches = []
        for i in range(n_z):
            if token and pool is not None:
                # build the vector manually so the attention cache is kept
                parts, tok_cache = [], None
                for entry in layout.entries:
                    mat = bundle.matrices[entry.name]
                    if entry.granularity == "video":
                        parts.append(mat[0])
                    elif entry.granularity == "tokens":
                        tok = mat.reshape(n_z, entry.token_count, entry.dim)
                        pooled, tok_cache = _mhsa_forward(tok[i], pool)
                        parts.append(pooled)
                    else:
                        parts.append(mat[i])
                feats[i] = np.concatenate(parts)
                mhsa_caches.append(tok_cache)
            else:
                feats[i] = concat_features(bundle, layout, i, pool)
        z = feats @ mlp.w1 + mlp.b1
        a = act(z)
        scores = a @ mlp.w2 + mlp.b2
        preds[vi] = scores.mean()
        targets[vi] = mos
        caches.append((feats, z, a, mhsa_caches))

    loss_value = loss_fn(preds, targets)
    dpred = loss_grad_fn(preds, targets)

    grads = _zeros_like_params(params_from_head(head))
    for vi, (feats, z, a, mhsa_caches) in enumerate(caches):
        n_z = feats.shape[0]
        u = dpred[vi] / n_z                      # upstream per index score
        grads["w2"] += u * a.sum(axis=0)
        grads["b2"] += u * n_z
        dz = (u * mlp.w2) * act_prime(z)         # (n_z, hidden)
        grads["w1"] += feats.T @ dz
        grads["b1"] += dz.sum(axis=0)
        if token and pool is not None:
            dfeats = dz @ mlp.w1.T
            for i in range(n_z):
                _mhsa_backward(dfeats[i, token_slice], pool, mhsa_caches[i],
                               grads)
    return loss_value, grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls(m=_zeros_like_params(params), v=_zeros_like_params(params))


def adam_step(params, grads, state: AdamState, t: int, cfg: TrainConfig,
              epoch: int = 0):
    """One bias-corrected Adam update; lr drops once epoch >= lr_decay_epoch."""
    if t < 1:
        raise TrainingError(f"step index must be >= 1, got {t}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k!r}")
    lr = cfg.learning_rate
    if epoch >= cfg.lr_decay_epoch:
        lr /= cfg.lr_decay_factor
    new_params, new_m, new_v = {}, {}, {}
    for k in params:
        g = grads[k]
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        new_params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(m=new_m, v=new_v)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainTrace:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    skipped_batches: int = 0


@dataclass
class TrainResult:
    head: FusionHead
    trace: TrainTrace


def init_params(layout: ConcatLayout, cfg: TrainConfig,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    d_in = layout.total_dim
    bound1 = 1.0 / np.sqrt(d_in)
    bound2 = 1.0 / np.sqrt(cfg.hidden)
    params = {
        "w1": rng.uniform(-bound1, bound1, size=(d_in, cfg.hidden)),
        "b1": np.zeros(cfg.hidden),
        "w2": rng.uniform(-bound2, bound2, size=cfg.hidden),
        "b2": np.zeros(()),
    }
    token = layout.token_entry()
    if token is not None:
        d = token.dim
        if d % cfg.mhsa_heads:
            raise TrainingError(
                f"mhsa_heads={cfg.mhsa_heads} must divide token dim {d}")
        d_head = d // cfg.mhsa_heads
        bound = 1.0 / np.sqrt(d)
        for key, shape in (("wq", (cfg.mhsa_heads, d, d_head)),
                           ("wk", (cfg.mhsa_heads, d, d_head)),
                           ("wv", (cfg.mhsa_heads, d, d_head)),
                           ("wo", (d, d))):
            params[key] = rng.uniform(-bound, bound, size=shape)
    return params


def train(dataset, registry: SourceRegistry, cfg: TrainConfig) -> TrainResult:
    """Seeded mini-batch training of the fusion head on (bundle, mos) pairs.

    Batches with constant labels are skipped (counted in the trace). The
    epoch shuffle stream is derived from (seed, 7919, epoch), so identical
    configs reproduce bit-identical parameter trajectories.
    """
    samples = list(dataset)
    if len(samples) < 2:
        raise TrainingError("training needs at least 2 labelled videos")
    if cfg.batch_size < 2:
        raise TrainingError("batch_size must be >= 2 for the correlation loss")
    layout = ConcatLayout.from_registry(registry)
    for bundle, _ in samples:
        bundle.validate(registry)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(layout, cfg, rng)
    state = AdamState.zeros(params)
    trace = TrainTrace()
    t = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 7919, epoch]).permutation(
            len(samples))
        losses = []
        for start in range(0, len(samples), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            batch = [samples[j] for j in idx]
            labels = np.array([mos for _, mos in batch])
            if np.all(labels == labels[0]):
                trace.skipped_batches += 1
                continue
            head = _head_from_params(layout, params, cfg.activation,
                                     cfg.mhsa_heads)
            loss_value, grads = backprop(batch, head, loss=cfg.loss)
            t += 1
            params, state = adam_step(params, grads, state, t, cfg,
                                      epoch=epoch)
            losses.append(loss_value)
        trace.epoch_losses.append(float(np.mean(losses)) if losses
                                  else float("nan"))
    trace.steps = t
    head = _head_from_params(layout, params, cfg.activation, cfg.mhsa_heads)
    return TrainResult(head=head, trace=trace)


# ---------------------------------------------------------------------------
# Checkpoint IO


def save_checkpoint(path: str | Path, head: FusionHead, cfg: TrainConfig,
                    master_seed: int = 0) -> Path:
    """Binary container: layout descriptor, f64 tensors, config echo, seed."""
    params = params_from_head(head)
    names = sorted(params)
    header = {
        "layout": [[e.name, e.dim, e.granularity, e.token_count]
                   for e in head.layout.entries],
        "activation": head.mlp.activation,
        "mhsa_heads": head.pool.head_count if head.pool else None,
        "train_config": asdict(cfg),
        "seed": master_seed,
        "tensors": names,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<HI", CHECKPOINT_VERSION, len(blob))
    out += blob
    for name in names:
        tensor = np.ascontiguousarray(params[name], dtype="<f8")
        out += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            out += struct.pack("<I", dim)
        out += tensor.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))
    return path


def load_checkpoint(path: str | Path):
    """Inverse of save_checkpoint; returns (head, cfg, master_seed)."""
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 10
    try:
        header = json.loads(data[offset:offset + header_len])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    offset += header_len

    tensors = {}
    for name in header["tensors"]:
        if offset + 1 > len(data):
            raise CheckpointError(f"{path}: truncated at tensor {name!r}")
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if ndim else 8
        if offset + n_bytes > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(
            data[offset:offset + n_bytes], dtype="<f8").reshape(shape).copy()
        offset += n_bytes

    layout = ConcatLayout(entries=tuple(
        LayoutEntry(name, dim, gran, tok)
        for name, dim, gran, tok in header["layout"]))
    cfg = TrainConfig(**header["train_config"])
    heads = header["mhsa_heads"] or cfg.mhsa_heads
    head = _head_from_params(layout, tensors, header["activation"], heads)
    return head, cfg, header["seed"]
