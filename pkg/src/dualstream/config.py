"""Flat `key = value` run configuration.

One namespace-dotted key per tunable, every key validated at load time,
unknown keys rejected.  CLI flags override file values; the effective
merged config is echoed before every command runs so any run can be
reproduced from its log.
"""

from __future__ import annotations

from .data import GenConfig
from .errors import ConfigError
from .gate import GateParams
from .losses import LossWeights
from .model import ModelConfig


def _unit(lo=0.0, hi=1.0, open_lo=False, open_hi=False):
    def check(v):
        ok_lo = v > lo if open_lo else v >= lo
        ok_hi = v < hi if open_hi else v <= hi
        return ok_lo and ok_hi
    return check


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _ge1(v):
    return v >= 1


# key -> (type, default, validator or None)
SCHEMA = {
    "data.seed": (int, 0, None),
    "data.scenes": (int, 200, _ge1),
    "data.speakers": (int, 3, _ge1),
    "data.frames": (int, 12, _ge1),
    "data.height": (int, 8, _ge1),
    "data.width": (int, 8, _ge1),
    "data.mel_bins": (int, 13, _ge1),
    "data.p_on_on": (float, 0.9, _unit()),
    "data.p_off_on": (float, 0.08, _unit()),
    "data.distractor_rate": (float, 0.12, _unit()),
    "data.noise_std": (float, 0.3, _nonneg),
    "data.burst_rate": (float, 0.08, _unit()),
    "data.burst_amp": (float, 1.0, _nonneg),
    "data.max_concurrent": (int, 2, _ge1),
    "data.overlap_rate": (float, 0.05, _unit()),

    "model.channels": (int, 16, _ge1),
    "model.heads": (int, 4, _ge1),
    "model.mlp_ratio": (int, 4, _ge1),
    "model.rounds": (int, 2, _ge1),
    "model.s_max": (int, 4, _ge1),
    "model.vis_hidden": (int, 32, _ge1),
    "model.audio_hidden": (int, 32, _ge1),
    "model.ln_eps": (float, 1e-5, _pos),
    "model.init_seed": (int, 0, None),
    "model.ablate_speaker": (bool, False, None),
    "model.ablate_temporal": (bool, False, None),

    "train.epochs": (int, 16, _ge1),
    "train.lr": (float, 0.03, _pos),
    "train.momentum": (float, 0.9, _unit(hi=1.0, open_hi=True)),
    "train.seed": (int, 0, None),

    "gate.t_main": (float, 0.0, None),
    "gate.t_veto": (float, 0.06, _unit(open_lo=True, open_hi=True)),
    "gate.gamma": (float, 0.8, _unit()),
    "gate.eps": (float, 1e-6, _pos),
    "gate.conv_hidden": (int, 16, _ge1),
    "gate.rnn_hidden": (int, 16, _ge1),
    "gate.epochs": (int, 20, _ge1),
    "gate.lr": (float, 0.03, _pos),

    "loss.w_av": (float, 1.0, _nonneg),
    "loss.w_v": (float, 0.5, _nonneg),
    "loss.w_a": (float, 0.5, _nonneg),
    "loss.w_con": (float, 0.3, _nonneg),
    "loss.temperature": (float, 0.07, _pos),

    "eval.threshold": (float, 0.0, None),
}


def _parse_value(key, text):
    expected, _default, _check = SCHEMA[key]
    text = text.strip()
    try:
        if expected is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text}")
        return expected(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from None


class RunConfig:
    """Validated flat configuration with typed accessors."""

    def __init__(self, values=None):
        self.values = {k: default for k, (_t, default, _c) in SCHEMA.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)
        self.validate()

    def __getitem__(self, key):
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        expected, _default, check = SCHEMA[key]
        if isinstance(value, str):
            value = _parse_value(key, value)
        if expected is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, expected):
            raise ConfigError(
                f"config key {key}: expected {expected.__name__}, "
                f"got {type(value).__name__}")
        if check is not None and not check(value):
            raise ConfigError(f"config key {key}: value {value} out of range")
        self.values[key] = value

    def validate(self):
        if self["model.channels"] % self["model.heads"] != 0:
            raise ConfigError(
                f"model.channels {self['model.channels']} must be divisible "
                f"by model.heads {self['model.heads']}")
        if self["data.speakers"] > self["model.s_max"]:
            raise ConfigError(
                f"data.speakers {self['data.speakers']} exceeds "
                f"model.s_max {self['model.s_max']}")

    def dump(self) -> str:
        lines = [f"{k} = {self._fmt(self.values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    # ------------------------------------------------------------------
    # views consumed by the other modules

    def gen_config(self, seed=None) -> GenConfig:
        return GenConfig(
            seed=self["data.seed"] if seed is None else seed,
            speakers=self["data.speakers"],
            frames=self["data.frames"],
            height=self["data.height"],
            width=self["data.width"],
            mel_bins=self["data.mel_bins"],
            p_on_on=self["data.p_on_on"],
            p_off_on=self["data.p_off_on"],
            distractor_rate=self["data.distractor_rate"],
            noise_std=self["data.noise_std"],
            burst_rate=self["data.burst_rate"],
            burst_amp=self["data.burst_amp"],
            max_concurrent=self["data.max_concurrent"],
            overlap_rate=self["data.overlap_rate"],
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=self["model.channels"],
            heads=self["model.heads"],
            mlp_ratio=self["model.mlp_ratio"],
            rounds=self["model.rounds"],
            s_max=self["model.s_max"],
            vis_hidden=self["model.vis_hidden"],
            audio_hidden=self["model.audio_hidden"],
            height=self["data.height"],
            width=self["data.width"],
            mel_bins=self["data.mel_bins"],
            ln_eps=self["model.ln_eps"],
            init_seed=self["model.init_seed"],
            ablate_speaker=self["model.ablate_speaker"],
            ablate_temporal=self["model.ablate_temporal"],
        )

    def gate_params(self) -> GateParams:
        return GateParams(
            t_main=self["gate.t_main"],
            t_veto=self["gate.t_veto"],
            gamma=self["gate.gamma"],
            eps=self["gate.eps"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            w_av=self["loss.w_av"],
            w_v=self["loss.w_v"],
            w_a=self["loss.w_a"],
            w_con=self["loss.w_con"],
            temperature=self["loss.temperature"],
        )


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, "
                              f"got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults <- file <- overrides, validated as a whole."""
    cfg = RunConfig()
    if path is not None:
        with open(path, "r") as fh:
            for k, v in parse_config_text(fh.read()).items():
                cfg.set(k, v)
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    cfg.validate()
    return cfg
