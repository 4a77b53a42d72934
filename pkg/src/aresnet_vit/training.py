"""Adam optimization, the epoch loop with early stopping, and binary
checkpoint persistence.

Checkpoint format (little-endian throughout):

    magic b"ARVT" | u32 version | u64 config-blob length | UTF-8 JSON blob |
    u32 tensor count | entries

    entry: u32 name length | name UTF-8 | u8 dtype tag (1=f64, 2=f32) |
           u8 rank | u64 dims... | raw payload

Save -> load -> save is byte-identical; structural damage raises typed
errors instead of crashing.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import RoiMask
from .data import Normalizer, PreparedData
from .errors import (
    CheckpointCorruptError,
    CheckpointMismatchError,
    CheckpointVersionError,
    ContractError,
    DivergenceError,
    NonFiniteError,
)
from .fusion import FusionModel, bce_loss
from .tensor import Tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)


class AdamState:
    """First/second moment estimates per parameter plus the shared step count."""

    def __init__(self, params: dict, config: AdamConfig):
        self.config = config
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_update(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected Adam step, updating parameters in place.

    Parameters without a gradient this step decay their moments as if the
    gradient were zero.
    """
    cfg = state.config
    state.t += 1
    b1t = 1.0 - cfg.beta1**state.t
    b2t = 1.0 - cfg.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / b1t
        v_hat = v / b2t
        p.data[...] = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state


class EarlyStopMonitor:
    """Halts when the validation loss has not strictly improved for
    ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ContractError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = np.inf
        self.since_improvement = 0

    def observe(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; returns True on improvement."""
        if val_loss < self.best:
            self.best = val_loss
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_improvement >= self.patience


@dataclass
class TrainLogRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class FitResult:
    log: list
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    optimizer: AdamState


def assemble_batch(samples, normalizer: Normalizer):
    images = np.stack([normalizer.apply(s.image) for s in samples])[:, None, :, :]
    masks = [RoiMask(s.mask) for s in samples]
    labels = np.array([s.label for s in samples])
    return Tensor(images), masks, labels


def batch_probabilities(model: FusionModel, samples, normalizer: Normalizer, batch_size: int = 16) -> np.ndarray:
    """Inference-mode probabilities for a sample list, in list order."""
    out = []
    for start in range(0, len(samples), batch_size):
        images, masks, _ = assemble_batch(samples[start : start + batch_size], normalizer)
        out.append(model.forward(images, masks=masks, training=False).data)
    return np.concatenate(out)


def dataset_loss(model: FusionModel, samples, normalizer: Normalizer, batch_size: int = 16) -> float:
    probs = batch_probabilities(model, samples, normalizer, batch_size)
    labels = np.array([s.label for s in samples])
    return bce_loss(Tensor(probs), labels).item()


def snapshot_model(model: FusionModel) -> dict:
    state = {name: p.data.copy() for name, p in model.named_params().items()}
    state.update({name: buf.copy() for name, buf in model.named_buffers().items()})
    return state


def restore_snapshot(model: FusionModel, state: dict):
    for name, p in model.named_params().items():
        p.data[...] = state[name]
    for prefix, bn in model.all_batchnorms().items():
        bn.running_mean = state[f"{prefix}.running_mean"].copy()
        bn.running_var = state[f"{prefix}.running_var"].copy()


def fit(model: FusionModel, data: PreparedData, config: TrainConfig, epoch_hook=None) -> FitResult:
    """Seeded mini-batch training with per-epoch validation and best-epoch
    parameter restoration.

    ``epoch_hook(epoch, model)``, when given, runs after each epoch's
    validation (before any early stop)."""
    if not data.train or not data.val:
        raise ContractError("fit needs non-empty train and val splits")
    params = model.named_params()
    state = AdamState(params, config.adam)
    monitor = EarlyStopMonitor(config.patience)
    best = snapshot_model(model)
    best_epoch = 0
    log = []
    stopped_early = False
    n_train = len(data.train)

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng(config.seed ^ epoch).permutation(n_train)
        total = 0.0
        for lo in range(0, n_train, config.batch_size):
            batch = [data.train[i] for i in order[lo : lo + config.batch_size]]
            images, masks, labels = assemble_batch(batch, data.normalizer)
            try:
                with T.Tape() as tape:
                    probs = model.forward(images, masks=masks, training=True)
                    loss = bce_loss(probs, labels)
                grads_by_tensor = T.backward(loss, tape)
            except NonFiniteError as exc:
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}: {exc}",
                    epoch=epoch, batch_ids=[s.id for s in batch],
                ) from exc
            grads = {name: grads_by_tensor.get(p) for name, p in params.items()}
            adam_update(params, grads, state)
            total += loss.item() * len(batch)
        train_loss = total / n_train
        val_loss = dataset_loss(model, data.val, data.normalizer, config.batch_size)
        if monitor.observe(val_loss):
            best = snapshot_model(model)
            best_epoch = epoch
        log.append(TrainLogRecord(epoch, train_loss, val_loss, time.perf_counter() - started))
        if epoch_hook is not None:
            epoch_hook(epoch, model)
        if monitor.should_stop:
            stopped_early = True
            break

    restore_snapshot(model, best)
    return FitResult(log=log, best_epoch=best_epoch, best_val_loss=float(monitor.best),
                     stopped_early=stopped_early, optimizer=state)


def write_training_log_csv(path, log):
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_loss,val_loss,seconds\n")
        for rec in log:
            fh.write(f"{rec.epoch},{rec.train_loss:.10g},{rec.val_loss:.10g},{rec.seconds:.3f}\n")


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"ARVT"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {1: np.dtype("<f8"), 2: np.dtype("<f4")}


@dataclass
class Checkpoint:
    config: dict
    tensors: dict  # name -> float array, insertion-ordered
    version: int = CHECKPOINT_VERSION


def make_checkpoint(model: FusionModel, config_echo: dict, normalizer: Normalizer,
                    optimizer: AdamState | None = None, split_seed: int | None = None,
                    metrics: dict | None = None) -> Checkpoint:
    from .fusion import model_config_to_dict

    blob = {
        "model": model_config_to_dict(model.config),
        "experiment": config_echo,
        "split_seed": split_seed,
        "metrics": metrics or {},
        "optimizer": None,
    }
    tensors = {}
    for name, p in model.named_params().items():
        tensors[name] = p.data
    for name, buf in model.named_buffers().items():
        tensors[name] = buf
    tensors["norm.mean"] = np.asarray(normalizer.mean)
    tensors["norm.std"] = np.asarray(normalizer.std)
    if optimizer is not None:
        blob["optimizer"] = {
            "t": optimizer.t,
            "lr": optimizer.config.lr,
            "beta1": optimizer.config.beta1,
            "beta2": optimizer.config.beta2,
            "eps": optimizer.config.eps,
        }
        for name, m in optimizer.m.items():
            tensors[f"optim.m.{name}"] = m
        for name, v in optimizer.v.items():
            tensors[f"optim.v.{name}"] = v
    return Checkpoint(config=blob, tensors=tensors)


def save_checkpoint(path, ckpt: Checkpoint):
    blob = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", 1, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointCorruptError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.raw)}"
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint: {exc}") from exc
    r = _Reader(raw)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError("bad magic; not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<Q")
    try:
        config = json.loads(r.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"config blob is not valid JSON: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _DTYPE_TAGS:
            raise CheckpointCorruptError(f"tensor {name!r} has unknown dtype tag {tag}")
        dims = tuple(r.unpack("<" + "Q" * rank)) if rank else ()
        dtype = _DTYPE_TAGS[tag]
        n_items = int(np.prod(dims)) if dims else 1
        payload = r.take(n_items * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(np.float64)
    if r.pos != len(raw):
        raise CheckpointCorruptError(f"{len(raw) - r.pos} trailing bytes after tensor table")
    return Checkpoint(config=config, tensors=tensors, version=version)


def _diff_path(expected, actual, path=""):
    if isinstance(expected, dict) and isinstance(actual, dict):
        for key in sorted(set(expected) | set(actual)):
            sub = f"{path}.{key}" if path else key
            if key not in expected or key not in actual:
                return sub
            hit = _diff_path(expected[key], actual[key], sub)
            if hit:
                return hit
        return None
    return None if expected == actual else path


def restore_model(model: FusionModel, ckpt: Checkpoint) -> Normalizer:
    """Load checkpoint tensors into a built model after verifying that the
    stored model config matches; returns the stored normalizer."""
    from .fusion import model_config_to_dict

    expected = json.loads(json.dumps(model_config_to_dict(model.config)))
    stored = ckpt.config.get("model")
    mismatch = _diff_path(expected, stored)
    if mismatch is not None:
        raise CheckpointMismatchError(f"checkpoint model config differs at field {mismatch!r}")
    params = model.named_params()
    for name, p in params.items():
        if name not in ckpt.tensors:
            raise CheckpointMismatchError(f"checkpoint is missing tensor {name!r}")
        if ckpt.tensors[name].shape != p.shape:
            raise CheckpointMismatchError(
                f"tensor {name!r} has shape {ckpt.tensors[name].shape}, model expects {p.shape}"
            )
        p.data[...] = ckpt.tensors[name]
    for prefix, bn in model.all_batchnorms().items():
        for suffix in ("running_mean", "running_var"):
            name = f"{prefix}.{suffix}"
            if name not in ckpt.tensors:
                raise CheckpointMismatchError(f"checkpoint is missing buffer {name!r}")
            bn.set_buffer(name, ckpt.tensors[name])
    for name in ("norm.mean", "norm.std"):
        if name not in ckpt.tensors:
            raise CheckpointMismatchError(f"checkpoint is missing tensor {name!r}")
    return Normalizer(mean=float(ckpt.tensors["norm.mean"]), std=float(ckpt.tensors["norm.std"]))
