"""Optimizers, learning-rate schedule, the training loop, and checkpoints."""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .masking import generate_mask
from .model import SparkConfig, SparkModel, spark_forward, spark_loss

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "cosine_lr",
    "OptimizerState",
    "adam_step",
    "lamb_step",
    "train",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "model_checkpoint_arrays",
    "model_from_checkpoint",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    lr_peak: float | None = None  # None: peak = 0.0002 * batch_size / 256
    schedule: str = "cosine"
    warmup_steps: int | None = None  # None: max(1% of steps, 10)
    weight_decay: float = 0.04
    optimizer: str = "lamb"  # "lamb" | "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    max_steps: int | None = None  # cap on total optimizer steps
    mask_ratio: float = 0.60

    def peak_lr(self) -> float:
        if self.lr_peak is not None:
            return float(self.lr_peak)
        return 0.0002 * self.batch_size / 256.0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_peak": self.lr_peak,
            "schedule": self.schedule,
            "warmup_steps": self.warmup_steps,
            "weight_decay": self.weight_decay,
            "optimizer": self.optimizer,
            "betas": list(self.betas),
            "eps": self.eps,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "mask_ratio": self.mask_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        return cls(**d)


def cosine_lr(step: int, total_steps: int, peak: float, warmup_steps: int = 0) -> float:
    """Linear warmup to the peak, then half-cosine decay to zero.

    The warmup value at its last step equals the peak, so the schedule is
    continuous at the boundary and non-increasing afterwards.
    """
    if total_steps < 1:
        raise ValueError("cosine_lr: total_steps must be >= 1")
    if warmup_steps > 0 and step < warmup_steps:
        return peak * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    t = min(step - warmup_steps, span)
    return max(0.0, 0.5 * peak * (1.0 + math.cos(math.pi * t / span)))


class OptimizerState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, shapes):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0


def _moments(state: OptimizerState, grads, betas):
    b1, b2 = betas
    state.t += 1
    mhat, vhat = [], []
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, g in enumerate(grads):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat.append(state.m[i] / c1)
        vhat.append(state.v[i] / c2)
    return mhat, vhat


def adam_step(params, grads, state: OptimizerState, lr, betas=(0.9, 0.999), eps=1e-8,
              weight_decay=0.0, decay_mask=None):
    """Adam with decoupled weight decay; mutates the parameter arrays in place."""
    mhat, vhat = _moments(state, grads, betas)
    for i, p in enumerate(params):
        update = mhat[i] / (np.sqrt(vhat[i]) + eps)
        if weight_decay and (decay_mask is None or decay_mask[i]):
            update = update + weight_decay * p
        p -= lr * update


def lamb_step(params, grads, state: OptimizerState, lr, betas=(0.9, 0.999), eps=1e-8,
              weight_decay=0.0, decay_mask=None, trust_clip=(0.0, 10.0)):
    """Layer-wise adaptive Adam: each tensor's update is rescaled by the trust
    ratio ||w|| / ||update||, clamped to ``trust_clip``; decoupled weight decay
    enters the update before the ratio is taken."""
    mhat, vhat = _moments(state, grads, betas)
    lo, hi = trust_clip
    for i, p in enumerate(params):
        update = mhat[i] / (np.sqrt(vhat[i]) + eps)
        if weight_decay and (decay_mask is None or decay_mask[i]):
            update = update + weight_decay * p
        wn = float(np.linalg.norm(p))
        un = float(np.linalg.norm(update))
        trust = wn / un if (wn > 0.0 and un > 0.0) else 1.0
        trust = min(max(trust, lo), hi)
        p -= lr * trust * update


def train(model: SparkModel, dataset, cfg: TrainConfig, metrics_path=None, log=None):
    """Pre-train ``model`` on ``dataset`` (anything with __len__ and pixels(i)).

    Per step: draw the next batch of the shuffled epoch order, augment each
    image, sample a fresh mask per image, run the masked forward/backward,
    and take one optimizer step under the cosine schedule. Returns the list
    of {step, lr, loss} rows (also written as CSV when ``metrics_path``
    is given). A non-finite loss aborts with a diagnostic.
    """
    from .data import augment  # local import to keep module load cheap

    n_data = len(dataset)
    if n_data < cfg.batch_size:
        raise ValueError(f"train: dataset of {n_data} images smaller than batch size {cfg.batch_size}")
    steps_per_epoch = n_data // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    if total_steps < 1:
        raise ValueError("train: zero training steps; increase epochs or dataset size")
    warmup = cfg.warmup_steps if cfg.warmup_steps is not None else max(total_steps // 100, 10)
    warmup = min(warmup, total_steps)
    peak = cfg.peak_lr()

    names = [n for n, _ in model.named_parameters()]
    params = [model.param(n).data for n in names]
    decay_mask = [n in model.decay for n in names]
    opt = OptimizerState([p.shape for p in params])
    step_fn = {"adam": adam_step, "lamb": lamb_step}.get(cfg.optimizer)
    if step_fn is None:
        raise ValueError(f"train: unknown optimizer {cfg.optimizer!r}")

    size = model.cfg.image_size
    grid = size // model.cfg.patch_size
    rows = []
    writer = open(metrics_path, "w", newline="") if metrics_path else None
    if writer:
        writer.write("step,lr,loss\n")
    try:
        gstep = 0
        for epoch in range(cfg.epochs):
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, epoch])).permutation(n_data)
            for b in range(steps_per_epoch):
                if gstep >= total_steps:
                    break
                idxs = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                batch = np.empty((cfg.batch_size, 3, size, size))
                masks = []
                for slot, di in enumerate(idxs):
                    srng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, int(di)]))
                    batch[slot] = augment(dataset.pixels(int(di)), size, srng)
                    masks.append(generate_mask(grid, grid, cfg.mask_ratio, srng,
                                               patch_size=model.cfg.patch_size))
                recon, targets, mmaps = spark_forward(model, batch, masks, mode="train")
                loss = spark_loss(recon, targets, mmaps, loss_on=model.cfg.loss_on)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingDiverged(
                        f"non-finite loss {loss_val} at step {gstep} (epoch {epoch}); "
                        f"lr={cosine_lr(gstep, total_steps, peak, warmup):.3e}"
                    )
                model.zero_grad()
                ag.backward(loss)
                grads = [model.param(n).grad if model.param(n).grad is not None else np.zeros_like(model.param(n).data)
                         for n in names]
                lr = cosine_lr(gstep, total_steps, peak, warmup)
                step_fn(params, grads, opt, lr, betas=cfg.betas, eps=cfg.eps,
                        weight_decay=cfg.weight_decay, decay_mask=decay_mask)
                row = {"step": gstep, "lr": lr, "loss": loss_val}
                rows.append(row)
                if writer:
                    writer.write(f"{gstep},{lr:.10g},{loss_val:.17g}\n")
                if log:
                    log(row)
                gstep += 1
            if gstep >= total_steps:
                break
    finally:
        if writer:
            writer.close()
    return rows, opt


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"SPRK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    version: int
    config: dict
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @property
    def step(self) -> int:
        return self.config.get("step", 0)


def save_checkpoint(path, arrays: "OrderedDict[str, np.ndarray]", config: dict):
    """Write magic, u32 version, u64 header length, JSON header, then the
    arrays as little-endian f32 in manifest order."""
    manifest = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.asarray(arr).shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({"config": config, "manifest": manifest},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise CheckpointError(f"checkpoint too short ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    hlen = struct.unpack("<Q", raw[8:16])[0]
    if len(raw) < 16 + hlen:
        raise CheckpointError("truncated checkpoint: header ends past end of file")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    data = raw[16 + hlen :]
    arrays = OrderedDict()
    for entry in header["manifest"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise CheckpointError(f"truncated checkpoint: array {entry['name']!r} ends past end of file")
        arr = np.frombuffer(data[start:end], dtype="<f4").astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    return Checkpoint(version=version, config=header["config"], arrays=arrays)


def model_checkpoint_arrays(model: SparkModel, opt: OptimizerState | None = None) -> "OrderedDict[str, np.ndarray]":
    arrays = model.state_arrays()
    if opt is not None:
        for name, m, v in zip(list(model.params.keys()), opt.m, opt.v):
            arrays[f"opt.m.{name}"] = m
            arrays[f"opt.v.{name}"] = v
    return arrays


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild a SparkModel (and optimizer state, if stored) from a checkpoint."""
    if ckpt.config.get("kind") != "spark":
        raise CheckpointError(f"not a model checkpoint (kind={ckpt.config.get('kind')!r})")
    cfg = SparkConfig.from_dict(ckpt.config["model"])
    model = SparkModel(cfg, np.random.default_rng(0))
    model.load_state_arrays(ckpt.arrays)
    opt = None
    names = list(model.params.keys())
    if f"opt.m.{names[0]}" in ckpt.arrays:
        opt = OptimizerState([model.param(n).shape for n in names])
        opt.m = [np.ascontiguousarray(ckpt.arrays[f"opt.m.{n}"]) for n in names]
        opt.v = [np.ascontiguousarray(ckpt.arrays[f"opt.v.{n}"]) for n in names]
        opt.t = ckpt.config.get("opt_t", 0)
    return model, opt
