"""Experiment configuration: strict schema, defaults, canonical hashing.

Configs are flat JSON objects. Unknown keys are errors, not warnings:
silent drift between a config file and the code is the dominant failure
mode in reproduction work.
"""

import hashlib
import json
from dataclasses import dataclass

from .candidates import MODES as CANDIDATE_MODES
from .synthdata import GeneratorConfig

FUSE_MODES = ("interp_log_mean", "decode_vote")


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key."""


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: object
    desc: str


SCHEMA = [
    Key("seed", int, 0, "master RNG seed for data, init and sampling"),
    # candidate space
    Key("candidate_mode", str, "with_offsets",
        "with_offsets: every starting offset per length class (2^M-1 variants); "
        "length_only: one candidate per length class"),
    Key("M", int, 3, "number of subsequence length classes (fractions 1 .. 1/2^(M-1))"),
    Key("resolutions", list, [12, 20, 32],
        "candidate input side lengths; the lowest is reserved for the global scan"),
    Key("t_ref", int, 32, "reference sequence length used to precompute the cost table"),
    # network sizes
    Key("feature_dim", int, 16, "frame feature dimension shared by both extractors"),
    Key("global_hidden", int, 8, "hidden width of the cheap global extractor"),
    Key("local_hidden", int, 64, "hidden width of the expensive local extractor"),
    Key("global_head_conv", int, 16, "conv channels of the global recognition head"),
    Key("global_head_rnn", int, 16, "recurrent width of the global recognition head"),
    Key("local_head_conv", int, 32, "conv channels of the local recognition head"),
    Key("local_head_rnn", int, 64, "recurrent width of the local recognition head"),
    Key("policy_hidden", int, 16, "recurrent/MLP width of the policy network"),
    # synthetic data generator
    Key("n_easy_glosses", int, 3, "glosses with mutually distinct coarse glyphs"),
    Key("n_hard_groups", int, 2, "gloss pairs sharing a coarse glyph (fine detail only)"),
    Key("sentence_len_min", int, 2, "minimum glosses per sentence"),
    Key("sentence_len_max", int, 3, "maximum glosses per sentence"),
    Key("frames_per_gloss_min", int, 10, "minimum frames rendered per gloss"),
    Key("frames_per_gloss_max", int, 14, "maximum frames rendered per gloss"),
    Key("gap_frames", int, 2, "near-blank transition frames between glosses"),
    Key("eta_max", int, 32, "native frame side length"),
    Key("easy_ratio", float, 0.5, "fraction of samples drawn from the easy sub-vocabulary"),
    Key("noise", float, 0.02, "per-pixel Gaussian noise level"),
    Key("burst_len", int, 3, "frames per segment carrying the disambiguating detail"),
    Key("detail_amp", float, 0.22, "amplitude of the fine checkerboard overlay"),
    Key("n_train", int, 200, "training split size"),
    Key("n_dev", int, 48, "development split size"),
    Key("n_test", int, 96, "test split size"),
    # optimization
    Key("lr", float, 1e-4, "initial learning rate (adaptive moment estimation)"),
    Key("weight_decay", float, 1e-4, "L2 weight decay"),
    Key("lr_milestones", list, [10, 20], "epochs at which the learning rate is scaled"),
    Key("lr_factor", float, 0.2, "learning-rate scale applied at each milestone"),
    Key("stage1_epochs", int, 8, "warm-up epochs (independent branch pretraining)"),
    Key("stage2_epochs", int, 10, "cooperation epochs (joint adaptive training)"),
    # loss weights and sampling temperature
    Key("alpha", float, 0.04, "efficiency loss weight"),
    Key("beta", float, 25.0, "feature distillation loss weight"),
    Key("gamma", float, 8.0, "distillation softening temperature"),
    Key("tau_init", float, 5.0, "initial Gumbel-Softmax temperature"),
    Key("tau_min", float, 0.5, "temperature floor"),
    Key("tau_decay", float, 0.9, "multiplicative temperature decay per epoch"),
    # prediction fusion
    Key("fuse", str, "decode_vote",
        "branch fusion: interp_log_mean (time-interpolated log average) or decode_vote"),
    Key("reuse_global", bool, True, "average the global branch into final predictions"),
]

_BY_NAME = {k.name: k for k in SCHEMA}


def defaults():
    cfg = {k.name: (list(k.default) if isinstance(k.default, list) else k.default)
           for k in SCHEMA}
    return _finish(cfg)


def _finish(cfg):
    cfg["vocab_size"] = cfg["n_easy_glosses"] + 2 * cfg["n_hard_groups"]  # derived
    return cfg


def validate(raw, path="config"):
    """Apply defaults, reject unknown keys, check types and constraints."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    cfg = {}
    for key, value in raw.items():
        spec = _BY_NAME.get(key)
        if spec is None:
            raise ConfigError(f"{path}.{key}: unknown key")
        if spec.type is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if spec.type is int and isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected int, got bool")
        if not isinstance(value, spec.type):
            raise ConfigError(
                f"{path}.{key}: expected {spec.type.__name__}, got {type(value).__name__}"
            )
        cfg[key] = value
    for k in SCHEMA:
        cfg.setdefault(k.name, list(k.default) if isinstance(k.default, list) else k.default)
    _check_constraints(cfg, path)
    return _finish(cfg)


def _check_constraints(cfg, path):
    def bad(key, msg):
        raise ConfigError(f"{path}.{key}: {msg}")

    if cfg["M"] < 1:
        bad("M", "must be >= 1")
    if cfg["candidate_mode"] not in CANDIDATE_MODES:
        bad("candidate_mode", f"must be one of {CANDIDATE_MODES}")
    res = cfg["resolutions"]
    if not res or not all(isinstance(r, int) and r >= 4 for r in res):
        bad("resolutions", "need integer side lengths >= 4")
    if len(set(res)) != len(res):
        bad("resolutions", "duplicate resolutions")
    if max(res) > cfg["eta_max"]:
        bad("resolutions", f"cannot exceed eta_max={cfg['eta_max']}")
    if cfg["eta_max"] % 4 != 0:
        bad("eta_max", "must be a multiple of 4 (glyph block size)")
    if cfg["sentence_len_min"] < 1 or cfg["sentence_len_min"] > cfg["sentence_len_max"]:
        bad("sentence_len_min", "empty sentence length range")
    if cfg["frames_per_gloss_min"] < 1 or cfg["frames_per_gloss_min"] > cfg["frames_per_gloss_max"]:
        bad("frames_per_gloss_min", "empty frames-per-gloss range")
    if not 0.0 <= cfg["easy_ratio"] <= 1.0:
        bad("easy_ratio", "must lie in [0, 1]")
    if cfg["alpha"] < 0 or cfg["beta"] < 0:
        bad("alpha", "loss weights must be nonnegative")
    if cfg["gamma"] <= 0 or cfg["tau_init"] <= 0 or cfg["tau_min"] <= 0:
        bad("gamma", "temperatures must be positive")
    if not 0 < cfg["tau_decay"] <= 1:
        bad("tau_decay", "must lie in (0, 1]")
    if cfg["fuse"] not in FUSE_MODES:
        bad("fuse", f"must be one of {FUSE_MODES}")
    if cfg["t_ref"] < max(8, 2 ** (cfg["M"] - 1)):
        bad("t_ref", "too short for the configured candidate intervals")
    for key in ("n_train", "n_dev", "n_test", "n_easy_glosses", "n_hard_groups"):
        if cfg[key] < 0:
            bad(key, "must be nonnegative")
    if cfg["n_easy_glosses"] + 2 * cfg["n_hard_groups"] < 2:
        bad("n_easy_glosses", "vocabulary needs at least two glosses")


def load(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate(raw, path=str(path))


def config_hash(cfg):
    """sha256 over the canonical JSON rendering of the resolved config."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def generator_config(cfg):
    return GeneratorConfig(
        n_easy_glosses=cfg["n_easy_glosses"],
        n_hard_groups=cfg["n_hard_groups"],
        sentence_len=(cfg["sentence_len_min"], cfg["sentence_len_max"]),
        frames_per_gloss=(cfg["frames_per_gloss_min"], cfg["frames_per_gloss_max"]),
        gap_frames=cfg["gap_frames"],
        eta_max=cfg["eta_max"],
        easy_ratio=cfg["easy_ratio"],
        noise=cfg["noise"],
        burst_len=cfg["burst_len"],
        detail_amp=cfg["detail_amp"],
        seed=cfg["seed"],
        n_train=cfg["n_train"],
        n_dev=cfg["n_dev"],
        n_test=cfg["n_test"],
    )


def describe_keys():
    """One line per key: name, default, description (used by --help)."""
    return "\n".join(f"  {k.name:<22} default={k.default!r:<20} {k.desc}" for k in SCHEMA)
