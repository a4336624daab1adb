"""Joint optimization: teacher-forced code prediction plus alignment.

Every training step rebuilds the tape: synthesize embeddings for the
batch's items, encode the histories, score next-item codes level by level
through the user-side assigner, add the weighted alignment term, run
backward, clip, and apply one Adam step. The four ablation switches only
change the wiring documented on TrainConfig.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Node, Parameter, Tape
from .errors import ConfigError, DataError
from .model import CompactModel, FlattenedModel
from .ran import RanMode


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    lambda_: float = 0.1
    max_hist: int = 30
    seed: int = 42
    grad_clip: float = 5.0
    # ablation switches
    user_side_tf: bool = True      # False: soft contexts thread the user-side levels
    use_aln: bool = True           # False: alignment term reported but not optimized
    redistribution: bool = True    # False: item embeddings are hard SID lookups
    shared_ran: bool = True        # False: independent item/user assigner copies

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")


class AdamOptimizer:
    """Adam with bias correction and decoupled weight decay."""

    BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

    def __init__(self, params: list[Parameter], lr: float, weight_decay: float = 0.0):
        names = [p.name for p in params]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate parameter names: {dupes[:4]}")
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0
        self.moments = {p.name: (np.zeros_like(p.value), np.zeros_like(p.value))
                        for p in params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if not np.isfinite(p.grad).all():
                raise DataError(f"non-finite gradient for parameter {p.name}; step aborted")
        self.step_count += 1
        for p in self.params:
            m, v = self.moments[p.name]
            kernels.adam_update(p.value, p.grad, m, v, self.step_count,
                                self.lr, self.BETA1, self.BETA2, self.EPS,
                                self.weight_decay)


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm


def rec_loss(tape: Tape, ran_user, h_states: Node, target_codes: np.ndarray,
             teacher_forcing: bool = True) -> Node:
    """Mean per-example sum of level NLLs for the target codes.

    Teacher forcing threads hard lookups of the ground-truth code between
    levels; the ablated variant threads the soft contexts instead, scored
    against the same targets.
    """
    target_codes = np.asarray(target_codes, dtype=np.intp)
    if teacher_forcing:
        trace = ran_user.run_recursive(tape, h_states, RanMode.TEACHER_FORCING, target_codes)
    else:
        trace = ran_user.run_recursive(tape, h_states, RanMode.REDISTRIBUTION)
    total = None
    for level, p in enumerate(trace.probs):
        term = ad.nll_rows(p, target_codes[:, level])
        total = term if total is None else ad.add(total, term)
    return ad.mean_all(total)


def total_loss(l_rec: Node, l_aln: Node | None, lambda_: float) -> Node:
    if lambda_ < 0:
        raise ConfigError("lambda must be >= 0")
    if l_aln is None:
        return l_rec
    return ad.add(l_rec, ad.scale(l_aln, lambda_))


@dataclass
class StepMetrics:
    rec: float
    aln: float
    total: float
    predictions: int
    items: int


def train_step_compact(model: CompactModel, batch_seqs, cfg: TrainConfig,
                       optimizer: AdamOptimizer) -> StepMetrics | None:
    """One optimizer step over a batch of user sequences (internal indices)."""
    windows = [np.asarray(s)[-(cfg.max_hist + 1):] for s in batch_seqs if len(s) >= 2]
    if not windows:
        return None
    batch = len(windows)
    lengths = np.array([len(w) - 1 for w in windows], dtype=np.intp)
    seq = int(lengths.max())
    uniq = np.unique(np.concatenate(windows))
    local = {int(item): i for i, item in enumerate(uniq)}

    optimizer.zero_grad()
    tape = Tape()
    mode = RanMode.REDISTRIBUTION if cfg.redistribution else RanMode.TEACHER_FORCING
    emb, _ = model.items.synthesize(tape, uniq, mode)

    token_idx = np.zeros((batch, seq), dtype=np.intp)
    for b, w in enumerate(windows):
        token_idx[b, :len(w) - 1] = [local[int(i)] for i in w[:-1]]
    tokens = ad.gather_rows(emb, token_idx.reshape(-1))
    states = model.backbone.encode(tape, tokens, batch, seq, lengths)

    pred_rows = np.concatenate([b * seq + np.arange(lengths[b]) for b in range(batch)])
    targets = np.concatenate([w[1:] for w in windows]).astype(np.intp)
    h = ad.gather_rows(states, pred_rows)
    l_rec = rec_loss(tape, model.ran_user, h, model.items.codes[targets], cfg.user_side_tf)
    l_aln = model.items.alignment_loss(tape, uniq)
    total = total_loss(l_rec, l_aln if cfg.use_aln else None, cfg.lambda_)

    tape.backward(total)
    if cfg.grad_clip:
        clip_gradients(optimizer.params, cfg.grad_clip)
    optimizer.step()
    return StepMetrics(l_rec.item(), l_aln.item(), total.item(),
                       predictions=len(targets), items=len(uniq))


def train_step_flattened(model: FlattenedModel, batch_seqs, cfg: TrainConfig,
                         optimizer: AdamOptimizer) -> StepMetrics | None:
    """Next-token cross-entropy over the flattened code stream."""
    windows = [np.asarray(s)[-cfg.max_hist:] for s in batch_seqs if len(s) >= 2]
    if not windows:
        return None
    batch = len(windows)
    levels, k = model.levels, model.k
    streams = [model.token_ids(w) for w in windows]
    lengths = np.array([len(s) for s in streams], dtype=np.intp)
    seq = int(lengths.max())

    optimizer.zero_grad()
    tape = Tape()
    token_idx = np.zeros((batch, seq), dtype=np.intp)
    for b, s in enumerate(streams):
        token_idx[b, :len(s)] = s
    tok_node = tape.parameter(model.tokens)
    tokens = ad.gather_rows(tok_node, token_idx.reshape(-1))
    states = model.backbone.encode(tape, tokens, batch, seq, lengths)

    # position t predicts token t+1; the final position of each stream has
    # no target
    pred_rows, target_tokens = [], []
    for b, s in enumerate(streams):
        pred_rows.append(b * seq + np.arange(len(s) - 1))
        target_tokens.append(s[1:])
    pred_rows = np.concatenate(pred_rows)
    target_tokens = np.concatenate(target_tokens)
    target_level = target_tokens // k  # 0-based level of each target token
    h = ad.gather_rows(states, pred_rows)

    total = None
    count = 0
    for level in range(levels):
        sel = np.flatnonzero(target_level == level)
        if not sel.size:
            continue
        h_level = ad.gather_rows(h, sel)
        table = ad.gather_rows(tok_node, np.arange(level * k, (level + 1) * k))
        probs = ad.softmax_rows(ad.matmul(h_level, ad.transpose(table)))
        nll = ad.sum_all(ad.nll_rows(probs, target_tokens[sel] - level * k))
        total = nll if total is None else ad.add(total, nll)
        count += sel.size
    loss = ad.scale(total, 1.0 / count)

    tape.backward(loss)
    if cfg.grad_clip:
        clip_gradients(optimizer.params, cfg.grad_clip)
    optimizer.step()
    return StepMetrics(loss.item(), 0.0, loss.item(), predictions=count, items=0)


def train_epoch(model, sequences: list[np.ndarray], cfg: TrainConfig,
                optimizer: AdamOptimizer, shuffle_rng: np.random.Generator) -> dict:
    """One pass over shuffled users; returns prediction-weighted mean losses."""
    order = shuffle_rng.permutation(len(sequences))
    step_fn = train_step_compact if model.kind == "compact" else train_step_flattened
    sums = np.zeros(3)
    weight = 0
    for start in range(0, len(order), cfg.batch_size):
        batch = [sequences[i] for i in order[start:start + cfg.batch_size]]
        metrics = step_fn(model, batch, cfg, optimizer)
        if metrics is None:
            continue
        sums += np.array([metrics.rec, metrics.aln, metrics.total]) * metrics.predictions
        weight += metrics.predictions
    if weight == 0:
        raise DataError("no trainable sequences (all users have < 2 interactions)")
    return {"rec": sums[0] / weight, "aln": sums[1] / weight, "total": sums[2] / weight}


def train(model, sequences, cfg: TrainConfig, epochs: int | None = None,
          epoch_callback=None) -> tuple[AdamOptimizer, list[dict], np.random.Generator]:
    optimizer = AdamOptimizer(model.parameters(), cfg.lr, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(epochs if epochs is not None else cfg.epochs):
        metrics = train_epoch(model, sequences, cfg, optimizer, shuffle_rng)
        metrics["epoch"] = epoch + 1
        history.append(metrics)
        if epoch_callback:
            epoch_callback(epoch + 1, metrics)
    return optimizer, history, shuffle_rng


# -- checkpoint container ------------------------------------------------------

CHECKPOINT_MAGIC = b"IRRC"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    optimizer_step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    rng_state: dict | None = None


def _write_blob(fh, arr: np.ndarray):
    fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blob(view, offset):
    rows, cols = struct.unpack_from("<II", view, offset)
    offset += 8
    n = rows * cols * 8
    arr = np.frombuffer(view, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
    return arr.copy(), offset + n


def save_checkpoint(path, model, optimizer: AdamOptimizer | None, config: dict,
                    rng_state: dict | None = None):
    registry = model.registry()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(registry)))
        for name, param in registry.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            _write_blob(fh, param.value)
        fh.write(struct.pack("<B", 1 if optimizer is not None else 0))
        if optimizer is not None:
            fh.write(struct.pack("<Q", optimizer.step_count))
            for name in registry:
                m, v = optimizer.moments[name]
                _write_blob(fh, m)
                _write_blob(fh, v)
        for payload in (config, rng_state or {}):
            blob = json.dumps(payload, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    view = Path(path).read_bytes()
    if view[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", view, 8)
    offset = 12
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        name = view[offset:offset + name_len].decode("utf-8")
        offset += name_len
        params[name], offset = _read_blob(view, offset)
    (has_opt,) = struct.unpack_from("<B", view, offset)
    offset += 1
    step = 0
    moments = {}
    if has_opt:
        (step,) = struct.unpack_from("<Q", view, offset)
        offset += 8
        for name in params:
            m, offset = _read_blob(view, offset)
            v, offset = _read_blob(view, offset)
            moments[name] = (m, v)
    (config_len,) = struct.unpack_from("<I", view, offset)
    offset += 4
    config = json.loads(view[offset:offset + config_len].decode("utf-8"))
    offset += config_len
    (rng_len,) = struct.unpack_from("<I", view, offset)
    offset += 4
    rng_state = json.loads(view[offset:offset + rng_len].decode("utf-8")) or None
    return Checkpoint(params, config, step, moments, rng_state)


def restore_model(model, checkpoint: Checkpoint):
    """Copy checkpoint values into a freshly built model's parameters."""
    registry = model.registry()
    if set(registry) != set(checkpoint.params):
        missing = set(registry) ^ set(checkpoint.params)
        raise DataError(f"checkpoint/model parameter mismatch: {sorted(missing)[:4]}")
    for name, param in registry.items():
        stored = checkpoint.params[name]
        if stored.shape != param.value.shape:
            raise DataError(f"parameter {name}: checkpoint shape {stored.shape} "
                            f"!= model shape {param.value.shape}")
        param.value[:] = stored
