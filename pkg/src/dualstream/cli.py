"""Command-line entry point: gen-data | train | eval | gradcheck.

Every command echoes its effective merged configuration before running, so
any output file can be reproduced from the invocation log.  Exit codes:
0 success, 1 usage/config, 2 data/format, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import RunConfig, load_config
from .data import generate, read_corpus, write_corpus
from .encoders import AudioClip, VisualClip
from .errors import (ConfigError, ContractError, DimensionError, DualStreamError,
                     FormatError, MetricError, NumericalError)
from .evaluation import (PredictionRecord, average_precision,
                         f1_per_speaker, false_positive_count,
                         metrics_report, write_predictions)
from .gate import ConfidenceNet, gate_batch, voice_confidence
from .gradcheck import check_parameter_gradients, worst_by_group
from .losses import total_loss
from .model import ActiveSpeakerModel, ModelConfig
from .train import (apply_checkpoint, gate_audio_features, load_checkpoint,
                    save_checkpoint, scene_batch, train_gate, train_model)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

GRADCHECK_LIMIT = 1e-3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _echo_config(cfg: RunConfig):
    print("# effective config")
    for line in cfg.dump().rstrip("\n").split("\n"):
        print(f"# {line}")


def _load_cfg(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides)


def _build_gate_net(cfg: RunConfig) -> ConfidenceNet:
    rng = np.random.default_rng([cfg["model.init_seed"], 0xA0D10])
    return ConfidenceNet(2 * cfg["data.mel_bins"], cfg["gate.conv_hidden"],
                         cfg["gate.rnn_hidden"], rng, "gate")


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg.set("data.seed", args.seed)
    if args.scenes is not None:
        cfg.set("data.scenes", args.scenes)
    _echo_config(cfg)
    n = cfg["data.scenes"]
    scenes = generate(cfg.gen_config(), n)
    write_corpus(scenes, args.out)
    labels = np.concatenate([sc.labels.reshape(-1) for sc in scenes])
    masks = np.concatenate([sc.mask.reshape(-1) for sc in scenes])
    distractors = np.concatenate([sc.distractor.reshape(-1) for sc in scenes])
    print(f"scenes={n}")
    print(f"label_rate={labels.sum() / max(masks.sum(), 1):.6f}")
    print(f"distractor_rate={distractors.sum() / max(masks.sum(), 1):.6f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _forward_scene(model, scene):
    return model.forward(VisualClip(scene.visual), AudioClip(scene.audio))


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.epochs is not None:
        cfg.set("train.epochs", args.epochs)
    _echo_config(cfg)
    scenes = read_corpus(args.corpus)
    model = ActiveSpeakerModel(cfg.model_config())

    log_path = args.out + ".log"
    with open(log_path, "w") as log:
        log.write("epoch,total,l_av,l_v,l_a,l_con\n")

        def log_fn(row):
            line = (f"{row['epoch']},{row['total']:.9f},{row['l_av']:.9f},"
                    f"{row['l_v']:.9f},{row['l_a']:.9f},{row['l_con']:.9f}")
            log.write(line + "\n")
            print(line)

        train_model(model, scenes, cfg.loss_weights(), cfg["train.epochs"],
                    cfg["train.lr"], cfg["train.momentum"],
                    cfg["train.seed"], log_fn)

    gate_net = _build_gate_net(cfg)
    train_gate(gate_net, scenes, cfg["gate.epochs"], cfg["gate.lr"],
               cfg["train.momentum"], cfg["train.seed"])

    tensors = {p.name: p.data for p in model.parameters() + gate_net.parameters()}
    save_checkpoint(tensors, args.out)
    print(f"wrote {args.out} ({len(tensors)} tensors) and {log_path}")
    return EXIT_OK


def collect_predictions(model, gate_net, scenes, gate_params, apply_gate):
    """Raw and optionally gated records for every mask-valid cell."""
    records = []
    raw_records = []
    for scene in scenes:
        out = _forward_scene(model, scene)
        raw = out.scores.data
        p_voice = voice_confidence(gate_audio_features(scene), gate_net).data
        final = gate_batch(raw, p_voice, gate_params) if apply_gate else raw
        s, t = scene.labels.shape
        for spk in range(s):
            for frame in range(t):
                if not scene.mask[spk, frame]:
                    continue
                common = dict(scene_id=scene.scene_id, speaker_idx=spk,
                              frame_idx=frame, p_voice=float(p_voice[frame]),
                              label=int(scene.labels[spk, frame]))
                records.append(PredictionRecord(
                    score=float(final[spk, frame]), **common))
                raw_records.append(PredictionRecord(
                    score=float(raw[spk, frame]), **common))
    return records, raw_records


def distractor_cells(scenes) -> set:
    cells = set()
    for scene in scenes:
        for spk, frame in zip(*np.nonzero(scene.distractor)):
            cells.add((scene.scene_id, int(spk), int(frame)))
    return cells


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    _echo_config(cfg)
    scenes = read_corpus(args.corpus)
    model = ActiveSpeakerModel(cfg.model_config())
    gate_net = _build_gate_net(cfg)
    tensors = load_checkpoint(args.model)
    apply_checkpoint(model.parameters() + gate_net.parameters(), tensors)

    first = scenes[0]
    if first.visual.shape[2:4] != (cfg["data.height"], cfg["data.width"]) \
            or first.audio.shape[1] != cfg["data.mel_bins"]:
        raise ConfigError(
            f"corpus shapes {first.visual.shape} / {first.audio.shape} do not "
            f"match configured model input sizes")

    gate_on = args.gate == "on"
    records, raw_records = collect_predictions(
        model, gate_net, scenes, cfg.gate_params(), gate_on)
    write_predictions(records, args.predictions)

    cells = distractor_cells(scenes)
    threshold = cfg["eval.threshold"]
    f1 = f1_per_speaker(records, threshold)
    metrics = {
        "n_records": len(records),
        "threshold": float(threshold),
        "ap": average_precision(records),
        "ap_nogate": average_precision(raw_records),
        "fp_total": false_positive_count(records, threshold),
        "fp_total_nogate": false_positive_count(raw_records, threshold),
        "fp_distractor": false_positive_count(records, threshold, cells),
        "fp_distractor_nogate": false_positive_count(raw_records, threshold, cells),
    }
    for spk, value in f1.items():
        metrics[f"f1_speaker_{spk}"] = value
    metrics["f1_macro"] = sum(f1.values()) / len(f1) if f1 else 0.0

    report = metrics_report(metrics)
    with open(args.metrics, "w") as fh:
        fh.write(report)
    print(report, end="")
    print(f"wrote {args.predictions} and {args.metrics}")
    return EXIT_OK


# tiny reference model used by the gradient check
TINY = dict(speakers=2, frames=3, channels=8, heads=2, rounds=2)


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    _echo_config(cfg)
    from .data import GenConfig, generate_scene

    gen = GenConfig(seed=5, speakers=TINY["speakers"], frames=TINY["frames"],
                    height=4, width=4, mel_bins=8, noise_std=0.2)
    scene = generate_scene(gen, 0)
    mc = ModelConfig(channels=TINY["channels"], heads=TINY["heads"],
                     rounds=TINY["rounds"], s_max=TINY["speakers"],
                     vis_hidden=8, audio_hidden=8, height=4, width=4,
                     mel_bins=8, init_seed=cfg["model.init_seed"])
    model = ActiveSpeakerModel(mc)
    rng = np.random.default_rng([cfg["model.init_seed"], 0xA0D10])
    gate_net = ConfidenceNet(16, 4, 4, rng, "gate")
    weights = cfg.loss_weights()
    frames = gate_audio_features(scene)
    target = (scene.labels.sum(axis=0) > 0).astype(np.float64)

    def build_loss():
        out = _forward_scene(model, scene)
        main, _ = total_loss(scene_batch(out, scene), weights)
        from .losses import masked_bce
        gate_loss = masked_bce(gate_net.logits(frames), target,
                               np.ones_like(target))
        return main + gate_loss

    params = model.parameters() + gate_net.parameters()
    worst = check_parameter_gradients(build_loss, params, step=1e-4,
                                      max_coords=8, seed=0)
    groups = worst_by_group(worst)
    overall = 0.0
    for module in sorted(groups):
        print(f"module {module}: worst_rel_err={groups[module]:.3e}")
        overall = max(overall, groups[module])
    print(f"overall worst_rel_err={overall:.3e} over {len(params)} parameters")
    if overall > GRADCHECK_LIMIT:
        print(f"FAIL: worst relative error exceeds {GRADCHECK_LIMIT}")
        return EXIT_NUMERICAL
    print("PASS")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="dualstream",
                     description="desk-scale audio-visual active speaker "
                                 "detection pipeline")
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train model + voice gate on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a corpus and report metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--gate", choices=("on", "off"), default="on")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ContractError, DimensionError, MetricError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
