"""Decoupled dual-stream interaction model.

Two views of the fused features are refined in parallel: the speaker
stream attends across candidate speakers within each frame (with a
learnable per-slot embedding added first), the temporal stream attends
across frames for each speaker.  After each round the streams exchange
information through mutual cross-attention; after the final round they are
summed and a single linear head produces one raw logit per (speaker,
frame).  The logits deliberately stay un-squashed: the voice gate consumes
them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, CALayer, SALayer, cal_forward, sal_forward
from .encoders import AudioClip, AudioEncoder, FusedFeatures, VisualClip, VisualEncoder, fuse
from .errors import ContractError, DimensionError
from .tensor import (Parameter, Tensor, add, broadcast_to, getitem,
                     init_uniform, linear, reshape, tmean, transpose)


class SpeakerEmbedding:
    """Learnable per-speaker-slot rows added before speaker-axis attention."""

    def __init__(self, s_max, dim, rng, name="speaker_emb"):
        if s_max < 1:
            raise ContractError(f"s_max must be >= 1, got {s_max}")
        self.s_max = s_max
        self.table = Parameter(init_uniform(rng, dim, (s_max, dim)), f"{name}.table")

    def parameters(self):
        return [self.table]

    def lookup(self, speakers):
        if speakers > self.s_max:
            raise ContractError(
                f"speaker count {speakers} exceeds embedding capacity {self.s_max}")
        return getitem(self.table, (slice(0, speakers),))


def speaker_stream(f_av: Tensor, emb: SpeakerEmbedding, sal: SALayer) -> Tensor:
    """Within-frame speaker interaction: swap to [T, S, 2C], add the slot
    embedding, self-attend over S with T folded into the batch, swap back."""
    s = f_av.shape[0]
    x = add(transpose(f_av, (1, 0, 2)), emb.lookup(s))
    return transpose(sal_forward(x, sal), (1, 0, 2))


def temporal_stream(f_av: Tensor, sal: SALayer) -> Tensor:
    """Cross-frame interaction: self-attend over T with S folded into the batch."""
    return sal_forward(f_av, sal)


def cross_interact(f_time: Tensor, f_sub: Tensor, cal_t: CALayer, cal_s: CALayer):
    """Mutual cross-attention between the two streams; each queries the
    other over the time axis (speakers stay in the batch)."""
    if f_time.shape != f_sub.shape:
        raise DimensionError(
            f"cross_interact expects matching shapes, got {f_time.shape} "
            f"vs {f_sub.shape}")
    return (cal_forward(f_time, f_sub, cal_t),
            cal_forward(f_sub, f_time, cal_s))


@dataclass
class InteractionRound:
    sal_time: SALayer
    sal_speaker: SALayer
    cal_time: CALayer
    cal_speaker: CALayer

    def parameters(self):
        return (self.sal_time.parameters() + self.sal_speaker.parameters()
                + self.cal_time.parameters() + self.cal_speaker.parameters())


class DualStreamStack:
    """The interaction rounds, the speaker embedding, and the output head.

    ``ablate_speaker`` / ``ablate_temporal`` replace the corresponding
    stream with the identity (the cross-stream exchange still runs), which
    is how the stream-contribution comparisons are produced.
    """

    def __init__(self, dim, heads, mlp_hidden, rounds, s_max, rng,
                 ln_eps=1e-5, ablate_speaker=False, ablate_temporal=False,
                 name="dual"):
        if rounds < 1:
            raise ContractError(f"rounds must be >= 1, got {rounds}")
        cfg = AttentionConfig(dim, heads, mlp_hidden)
        self.rounds = []
        for r in range(rounds):
            self.rounds.append(InteractionRound(
                sal_time=SALayer(cfg, rng, f"{name}.r{r}.sal_time", ln_eps),
                sal_speaker=SALayer(cfg, rng, f"{name}.r{r}.sal_speaker", ln_eps),
                cal_time=CALayer(cfg, rng, f"{name}.r{r}.cal_time", ln_eps),
                cal_speaker=CALayer(cfg, rng, f"{name}.r{r}.cal_speaker", ln_eps),
            ))
        self.emb = SpeakerEmbedding(s_max, dim, rng, f"{name}.speaker_emb")
        self.head_w = Parameter(init_uniform(rng, dim, (dim, 1)), f"{name}.head_w")
        self.head_b = Parameter(np.zeros(1), f"{name}.head_b")
        self.ablate_speaker = ablate_speaker
        self.ablate_temporal = ablate_temporal

    def parameters(self):
        params = []
        for rnd in self.rounds:
            params.extend(rnd.parameters())
        params.extend(self.emb.parameters())
        params.extend([self.head_w, self.head_b])
        return params


def dual_forward(f_av: Tensor, stack: DualStreamStack) -> Tensor:
    """Run the interaction rounds and the linear head; returns raw logits [S, T]."""
    s, t, _ = f_av.shape
    x_time, x_sub = f_av, f_av
    for rnd in stack.rounds:
        f_time = x_time if stack.ablate_temporal else temporal_stream(x_time, rnd.sal_time)
        f_sub = x_sub if stack.ablate_speaker else speaker_stream(x_sub, stack.emb, rnd.sal_speaker)
        x_time, x_sub = cross_interact(f_time, f_sub, rnd.cal_time, rnd.cal_speaker)
    f_dual = add(x_time, x_sub)
    return reshape(linear(f_dual, stack.head_w, stack.head_b), (s, t))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (widths, depth, capacity, init seed)."""

    channels: int = 16
    heads: int = 4
    mlp_ratio: int = 4
    rounds: int = 2
    s_max: int = 4
    vis_hidden: int = 32
    audio_hidden: int = 32
    height: int = 8
    width: int = 8
    mel_bins: int = 13
    ln_eps: float = 1e-5
    init_seed: int = 0
    ablate_speaker: bool = False
    ablate_temporal: bool = False

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ContractError(
                f"channels {self.channels} must be divisible by heads {self.heads}")
        if min(self.channels, self.heads, self.rounds, self.s_max,
               self.vis_hidden, self.audio_hidden, self.height, self.width,
               self.mel_bins, self.mlp_ratio) < 1:
            raise ContractError(f"all model dims must be >= 1: {self}")


@dataclass
class ModelOutput:
    """Everything one forward pass produces for training and evaluation."""

    scores: Tensor          # [S, T] fused-branch raw logits
    visual_logits: Tensor   # [S, T] auxiliary visual-branch logits
    audio_logits: Tensor    # [T] auxiliary any-speech logits
    audio_frames: Tensor    # [T, C] pre-fusion audio embedding
    visual_frames: Tensor   # [S, T, C] pre-fusion visual embedding
    fused: FusedFeatures


class ActiveSpeakerModel:
    """Encoders, cross-modal fusion, dual-stream stack and output heads."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        c = cfg.channels
        self.visual_enc = VisualEncoder(cfg.height, cfg.width, c,
                                        cfg.vis_hidden, rng, "visual_enc")
        self.audio_enc = AudioEncoder(cfg.mel_bins, c, cfg.audio_hidden,
                                      rng, "audio_enc")
        fusion_cfg = AttentionConfig(c, cfg.heads, cfg.mlp_ratio * c)
        self.cal_av = CALayer(fusion_cfg, rng, "fusion.cal_av", cfg.ln_eps)
        self.cal_va = CALayer(fusion_cfg, rng, "fusion.cal_va", cfg.ln_eps)
        self.stack = DualStreamStack(
            2 * c, cfg.heads, cfg.mlp_ratio * 2 * c, cfg.rounds, cfg.s_max,
            rng, cfg.ln_eps, cfg.ablate_speaker, cfg.ablate_temporal, "dual")
        self.head_v_w = Parameter(init_uniform(rng, c, (c, 1)), "heads.visual_w")
        self.head_v_b = Parameter(np.zeros(1), "heads.visual_b")
        self.head_a_w = Parameter(init_uniform(rng, c, (c, 1)), "heads.audio_w")
        self.head_a_b = Parameter(np.zeros(1), "heads.audio_b")

    def parameters(self):
        return (self.visual_enc.parameters() + self.audio_enc.parameters()
                + self.cal_av.parameters() + self.cal_va.parameters()
                + self.stack.parameters()
                + [self.head_v_w, self.head_v_b, self.head_a_w, self.head_a_b])

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def forward(self, visual: VisualClip, audio: AudioClip) -> ModelOutput:
        s, t = visual.values.shape[:2]
        if audio.values.shape[0] != 4 * t:
            raise DimensionError(
                f"audio length {audio.values.shape[0]} != 4 x {t} visual frames")
        c = self.cfg.channels

        f_v = self.visual_enc.forward(visual)
        audio_frames = self.audio_enc.frame_embedding(audio)
        f_a = broadcast_to(reshape(audio_frames, (1, t, c)), (s, t, c))
        f_av = fuse(f_v, f_a, self.cal_av, self.cal_va)
        fused = FusedFeatures(f_v=f_v, f_a=f_a, f_av=f_av)

        scores = dual_forward(f_av, self.stack)

        # channel halves of f_av: [0, C) is the cross-attended audio stream,
        # [C, 2C) the visual stream
        fa_tilde = getitem(f_av, (Ellipsis, slice(0, c)))
        fv_tilde = getitem(f_av, (Ellipsis, slice(c, 2 * c)))
        visual_logits = reshape(linear(fv_tilde, self.head_v_w, self.head_v_b), (s, t))
        audio_logits = reshape(
            linear(tmean(fa_tilde, axis=0), self.head_a_w, self.head_a_b), (t,))

        return ModelOutput(
            scores=scores,
            visual_logits=visual_logits,
            audio_logits=audio_logits,
            audio_frames=audio_frames,
            visual_frames=f_v,
            fused=fused,
        )
