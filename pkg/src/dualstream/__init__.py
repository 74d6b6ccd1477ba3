"""Desk-scale audio-visual active speaker detection.

Cross-modal attention fusion feeds two decoupled interaction streams (one
over speakers within a frame, one over frames per speaker) that exchange
information through mutual cross-attention; a separately trained
voice-confidence branch downgrades confident predictions on frames with
weak audio evidence.  Ships with a seeded synthetic scenario generator,
a from-scratch reverse-mode tensor engine, training loop, and ranking
evaluators.
"""

from .attention import AttentionConfig, CALayer, SALayer, cal_forward, mhca, mhsa, sal_forward
from .data import GenConfig, Scenario, generate, read_corpus, write_corpus
from .encoders import (AudioClip, AudioEncoder, FusedFeatures, VisualClip,
                       VisualEncoder, encode_audio, encode_visual, fuse)
from .evaluation import (PredictionRecord, average_precision, f1_per_speaker,
                         false_positive_count, read_predictions,
                         write_predictions)
from .gate import ConfidenceNet, GateParams, gate_apply, gate_batch, gate_scale, voice_confidence
from .losses import (LossWeights, SupervisionBatch, contrastive_av,
                     masked_bce, total_loss)
from .model import (ActiveSpeakerModel, DualStreamStack, ModelConfig,
                    SpeakerEmbedding, cross_interact, dual_forward,
                    speaker_stream, temporal_stream)
from .tensor import Parameter, Tensor, backward, layer_norm, linear, matmul, softmax, zero_grads

__version__ = "0.1.0"
