"""Desk-scale supervised training on synthetic shape scenes.

Scenes are textured backgrounds with anti-aliased disks (class 1) and
axis-aligned rectangles (class 2) whose label maps are rendered from the same
geometry. The optimizer is SGD with momentum, a poly learning-rate schedule,
and decoupled weight decay applied to convolution weights only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, IO, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .autodiff import Tape
from .errors import InvalidArgumentError, ShapeError
from .model import LeMoReModel
from .tensor import Tensor

IGNORE_INDEX = 255


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass
class SyntheticScene:
    image: Tensor          # 3,H,W in [0,1]
    labels: np.ndarray     # H,W int64 over {0 background, 1 disk, 2 rectangle}
    seed: int


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Muted low-frequency texture so shapes stand out by geometry and color."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((3, size, size))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.5, 2) * 2 * math.pi / size
        phase = rng.uniform(0, 2 * math.pi, 2)
        img[c] = 0.42 + 0.10 * np.sin(fx * xx + phase[0]) * np.cos(fy * yy + phase[1])
    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def _shape_color(rng: np.random.Generator) -> np.ndarray:
    # saturated color kept away from the mid-gray background band
    color = rng.uniform(0.0, 1.0, 3)
    color[rng.integers(0, 3)] = rng.choice([rng.uniform(0.75, 1.0),
                                            rng.uniform(0.0, 0.1)])
    return color


def generate_scene(seed: int, size: int, n_disks: Optional[int] = None,
                   n_rects: Optional[int] = None) -> SyntheticScene:
    """Deterministic scene: 1..3 rectangles drawn first, 1..3 disks on top.

    Pass explicit counts (possibly zero) to override the random draw.
    """
    if size < 32:
        raise InvalidArgumentError("size must be at least 32")
    rng = np.random.default_rng(seed)
    img = _background(rng, size)
    labels = np.zeros((size, size), dtype=np.int64)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")

    if n_rects is None:
        n_rects = int(rng.integers(1, 4))
    if n_disks is None:
        n_disks = int(rng.integers(1, 4))

    for _ in range(n_rects):
        rw = rng.uniform(0.18, 0.42) * size
        rh = rng.uniform(0.18, 0.42) * size
        x0 = rng.uniform(1, size - 1 - rw)
        y0 = rng.uniform(1, size - 1 - rh)
        x1, y1 = x0 + rw, y0 + rh
        # per-axis pixel coverage gives the anti-aliased edge
        ax = np.clip(np.minimum(xx + 0.5, x1) - np.maximum(xx - 0.5, x0), 0, 1)
        ay = np.clip(np.minimum(yy + 0.5, y1) - np.maximum(yy - 0.5, y0), 0, 1)
        alpha = ax * ay
        color = _shape_color(rng)
        img = (1 - alpha) * img + alpha * color[:, None, None]
        inside = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
        labels[inside] = 2

    for _ in range(n_disks):
        r = rng.uniform(0.10, 0.21) * size
        cx = rng.uniform(r, size - r)
        cy = rng.uniform(r, size - r)
        dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        alpha = np.clip(r - dist + 0.5, 0.0, 1.0)
        color = _shape_color(rng)
        img = (1 - alpha) * img + alpha * color[:, None, None]
        labels[dist <= r] = 1

    return SyntheticScene(Tensor(np.clip(img, 0.0, 1.0)), labels, seed)


def make_dataset(n_scenes: int, size: int, seed: int = 0) -> List[SyntheticScene]:
    return [generate_scene(seed * 100_003 + i, size) for i in range(n_scenes)]


# ---------------------------------------------------------------------------
# loss and metric

def cross_entropy_loss(logits: Tensor, labels: np.ndarray,
                       ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean over non-ignored pixels of -log softmax(logits)[label]."""
    if logits.rank != 3:
        raise ShapeError(f"logits must be K,H,W, got {logits.shape}")
    k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise ShapeError(f"labels must be {h}x{w}, got {labels.shape}")
    valid = labels != ignore_index
    lab_valid = labels[valid]
    if lab_valid.size and (lab_valid.min() < 0 or lab_valid.max() >= k):
        raise InvalidArgumentError(
            f"labels must lie in [0,{k}) or equal {ignore_index}")

    z = logits.data
    zmax = z.max(axis=0)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=0)
    log_probs = z - zmax - np.log(sez)            # K,H,W
    n_valid = int(valid.sum())
    if n_valid == 0:
        return T.scale(T.sum_all(logits), 0.0)    # defined as 0, zero gradient
    lab_safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(log_probs, lab_safe[None], axis=0)[0]
    loss_val = -(picked[valid].sum()) / n_valid

    softmax = ez / sez

    def backward(g):
        gs = g.reshape(-1)[0] / n_valid
        grad = softmax.copy()
        onehot_rows = lab_safe.reshape(-1)
        flat = grad.reshape(k, -1)
        flat[onehot_rows, np.arange(flat.shape[1])] -= 1.0
        grad *= gs * valid[None]
        return (grad,)

    return T._emit("cross_entropy", np.asarray([loss_val]), (logits,), backward)


def miou(pred: np.ndarray, truth: np.ndarray,
         num_classes: int) -> Tuple[float, np.ndarray]:
    """Mean intersection-over-union and the per-class vector (NaN where the
    class is absent from both maps and excluded from the mean)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {truth.shape}")
    for name, m in (("pred", pred), ("truth", truth)):
        if m.min() < 0 or m.max() >= num_classes:
            raise InvalidArgumentError(
                f"{name} values must lie in [0,{num_classes})")
    confusion = np.bincount(
        truth.reshape(-1) * num_classes + pred.reshape(-1),
        minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(0) + confusion.sum(1) - inter
    per_class = np.full(num_classes, np.nan)
    present = union > 0
    per_class[present] = inter[present] / union[present]
    if not present.any():
        return 0.0, per_class
    return float(np.nanmean(per_class)), per_class


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class TrainState:
    model: LeMoReModel
    base_lr: float = 1.2e-4
    momentum: float = 0.9
    weight_decay: float = 0.01
    poly_power: float = 1.0
    max_steps: int = 1000
    step: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.model.parameters():
            self.velocity[name] = np.zeros_like(p.data)

    def learning_rate(self) -> float:
        frac = min(self.step / self.max_steps, 1.0)
        return self.base_lr * (1.0 - frac) ** self.poly_power


def train_step(state: TrainState, batch: Sequence[SyntheticScene]) -> float:
    """One SGD update from gradients averaged over the batch."""
    if not batch:
        raise InvalidArgumentError("batch must be nonempty")
    model = state.model
    grad_sum: Dict[str, np.ndarray] = {}
    loss_sum = 0.0
    for scene in batch:
        with Tape() as tape:
            logits = model.forward(scene.image, "train")
            loss = cross_entropy_loss(logits, scene.labels)
        grads = tape.backward(loss)
        loss_sum += loss.item()
        for name, p in model.parameters():
            g = grads.get(p)
            if g is None:
                continue
            if name in grad_sum:
                grad_sum[name] += g
            else:
                grad_sum[name] = g.copy()

    lr = state.learning_rate()
    scale = 1.0 / len(batch)
    for name, entry in model.registry.items():
        if not entry.trainable:
            continue
        g = grad_sum.get(name)
        if g is None:
            continue
        p = entry.tensor.data
        if state.weight_decay and entry.decay:
            p -= lr * state.weight_decay * p
        v = state.velocity[name]
        v *= state.momentum
        v += g * scale
        p -= lr * v
    state.step += 1
    return loss_sum / len(batch)


def predict(model: LeMoReModel, scene: SyntheticScene,
            mode: str = "eval") -> np.ndarray:
    logits = model.forward(scene.image, mode)
    return logits.data.argmax(axis=0)


def evaluate(model: LeMoReModel, scenes: Sequence[SyntheticScene],
             mode: str = "eval") -> float:
    """Dataset mIoU from the pooled confusion over all scenes.

    mode="train" normalizes each scene by its own statistics, matching what
    the optimizer sees; the running estimates are snapshotted and restored so
    evaluation stays side-effect free. At batch size one the per-scene
    statistics vary too much for the running averages to reproduce, so the
    train-set metric is measured in this mode.
    """
    k = model.config.num_classes
    snapshot = None
    if mode == "train":
        snapshot = {n: e.tensor.data.copy() for n, e in model.registry.items()
                    if not e.trainable}
    confusion = np.zeros((k, k), dtype=np.int64)
    for scene in scenes:
        pred = predict(model, scene, mode)
        confusion += np.bincount(
            scene.labels.reshape(-1) * k + pred.reshape(-1),
            minlength=k * k).reshape(k, k)
    if snapshot is not None:
        for n, arr in snapshot.items():
            model.registry[n].tensor.data[...] = arr
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(0) + confusion.sum(1) - inter
    present = union > 0
    if not present.any():
        return 0.0
    return float(np.mean(inter[present] / union[present]))


def train_loop(state: TrainState, scenes: Sequence[SyntheticScene],
               steps: int, batch_size: int = 8, seed: int = 0,
               eval_every: int = 50, eval_mode: str = "train",
               metrics_out: Optional[IO[str]] = None,
               verbose: bool = False) -> float:
    """Run ``steps`` updates over a fixed scene set; returns final mIoU."""
    rng = np.random.default_rng(seed)
    n = len(scenes)
    final_miou = 0.0
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        loss = train_step(state, [scenes[i] for i in idx])
        record = {"step": state.step, "loss": round(loss, 6),
                  "lr": state.learning_rate()}
        if eval_every and state.step % eval_every == 0:
            final_miou = evaluate(state.model, scenes, eval_mode)
            record["miou"] = round(final_miou, 6)
        if metrics_out is not None:
            metrics_out.write(json.dumps(record) + "\n")
        if verbose and (state.step % 10 == 0 or "miou" in record):
            print(f"step {record['step']:>5} loss {record['loss']:.4f}"
                  + (f" miou {record['miou']:.4f}" if "miou" in record else ""))
    if eval_every and state.step % eval_every != 0:
        final_miou = evaluate(state.model, scenes, eval_mode)
        if metrics_out is not None:
            metrics_out.write(json.dumps(
                {"step": state.step, "miou": round(final_miou, 6)}) + "\n")
    return final_miou
