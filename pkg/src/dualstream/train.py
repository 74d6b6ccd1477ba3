"""Training loops, the optimizer, and checkpoint I/O.

Plain gradient descent with momentum and a fixed step, one update per
scene, scenes shuffled each epoch with a seeded generator.  The main model
and the voice-confidence branch are trained separately (the gate stays a
pure post-processor) but live in the same checkpoint.

Checkpoint container (little-endian, magic "D2CKPT1"): u32 tensor count,
then per tensor: u32 name length + utf-8 name, u32 ndim, u32 dims...,
float64 data row-major.
"""

from __future__ import annotations

import struct

import numpy as np

from .data import Scenario
from .encoders import AudioClip, VisualClip
from .errors import FormatError, NumericalError
from .gate import ConfidenceNet
from .losses import (LossWeights, SupervisionBatch, active_visual_frames,
                     masked_bce, total_loss)
from .model import ActiveSpeakerModel
from .tensor import backward, zero_grads

CKPT_MAGIC = b"D2CKPT1"


class MomentumSGD:
    """v <- momentum*v - lr*grad; p <- p + v."""

    def __init__(self, params, lr, momentum):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        for p in self.params:
            v = self.velocity[p.name]
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v


def _first_non_finite(params):
    for p in params:
        if not np.isfinite(p.data).all() or not np.isfinite(p.grad).all():
            return p.name
    return None


def scene_batch(model_out, scene: Scenario) -> SupervisionBatch:
    return SupervisionBatch(
        labels=scene.labels,
        mask=scene.mask,
        fused_logits=model_out.scores,
        visual_logits=model_out.visual_logits,
        audio_logits=model_out.audio_logits,
        audio_frames=model_out.audio_frames,
        visual_frames=active_visual_frames(model_out.visual_frames,
                                           scene.labels),
    )


def train_model(model: ActiveSpeakerModel, scenes, weights: LossWeights,
                epochs, lr, momentum, seed, log_fn=None):
    """Returns the per-epoch loss history as a list of dicts."""
    params = model.parameters()
    opt = MomentumSGD(params, lr, momentum)
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(scenes))
        sums = {"total": 0.0, "l_av": 0.0, "l_v": 0.0, "l_a": 0.0, "l_con": 0.0}
        for idx in order:
            scene = scenes[idx]
            zero_grads(params)
            out = model.forward(VisualClip(scene.visual), AudioClip(scene.audio))
            loss, parts = total_loss(scene_batch(out, scene), weights)
            value = loss.item()
            if not np.isfinite(value):
                culprit = _first_non_finite(params) or "loss"
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}; first bad parameter: "
                    f"{culprit}")
            backward(loss)
            opt.step()
            sums["total"] += value
            for k, v in parts.items():
                sums[k] += v
        n = float(len(scenes))
        row = {k: v / n for k, v in sums.items()}
        row["epoch"] = epoch
        history.append(row)
        if log_fn is not None:
            log_fn(row)
    return history


def pooled_audio_frames(scene: Scenario) -> np.ndarray:
    """Audio at the visual frame rate: mean over each group of 4 steps."""
    steps, m = scene.audio.shape
    return scene.audio.reshape(steps // 4, 4, m).mean(axis=1)


def gate_audio_features(scene: Scenario) -> np.ndarray:
    """Per-frame features for the voice-confidence branch: mean and std of
    each frame's 4 audio steps, [T, 2M].  The within-frame spread is what
    separates sustained speech from spiky interference."""
    steps, m = scene.audio.shape
    grouped = scene.audio.reshape(steps // 4, 4, m)
    return np.concatenate([grouped.mean(axis=1), grouped.std(axis=1)], axis=1)


def train_gate(net: ConfidenceNet, scenes, epochs, lr, momentum, seed):
    """Fit the confidence branch on frame-level any-speech labels."""
    params = net.parameters()
    opt = MomentumSGD(params, lr, momentum)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 1_000_003 + epoch]).permutation(len(scenes))
        for idx in order:
            scene = scenes[idx]
            frames = gate_audio_features(scene)
            target = (scene.labels.sum(axis=0) > 0).astype(np.float64)
            zero_grads(params)
            loss = masked_bce(net.logits(frames), target, np.ones_like(target))
            if not np.isfinite(loss.item()):
                culprit = _first_non_finite(params) or "loss"
                raise NumericalError(
                    f"non-finite gate loss at epoch {epoch}; first bad "
                    f"parameter: {culprit}")
            backward(loss)
            opt.step()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(named_tensors: dict, path) -> None:
    chunks = [CKPT_MAGIC, struct.pack("<I", len(named_tensors))]
    for name, value in named_tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise FormatError(
            f"bad checkpoint magic: expected {CKPT_MAGIC!r}, "
            f"got {blob[:len(CKPT_MAGIC)]!r}")
    offset = len(CKPT_MAGIC)

    def take(n):
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"checkpoint truncated at offset {offset}")
        out = blob[offset: offset + n]
        offset += n
        return out

    count = struct.unpack("<I", take(4))[0]
    tensors = {}
    for _ in range(count):
        name = take(struct.unpack("<I", take(4))[0]).decode("utf-8")
        ndim = struct.unpack("<I", take(4))[0]
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
        tensors[name] = data
    if offset != len(blob):
        raise FormatError(f"trailing data in checkpoint at offset {offset}")
    return tensors


def apply_checkpoint(params, tensors: dict) -> None:
    """Load saved values into parameters by name; names and shapes must match."""
    by_name = {p.name: p for p in params}
    missing = sorted(set(by_name) - set(tensors))
    extra = sorted(set(tensors) - set(by_name))
    if missing or extra:
        raise FormatError(
            f"checkpoint does not match model: missing {missing or 'none'}, "
            f"unexpected {extra or 'none'}")
    for name, p in by_name.items():
        if tensors[name].shape != p.data.shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"model expects {p.data.shape}")
        p.data[...] = tensors[name]
