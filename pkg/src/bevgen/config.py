"""Flat key=value run configuration with includes and strict validation.

Files hold one ``key = value`` pair per line; blank lines and lines
starting with ``#`` are ignored. A line ``include other.cfg`` splices
another file at that point (relative to the including file); later
assignments win. Every key is typed and checked against the schema
below — validation reports all violations at once, not just the first.

The resolved configuration has a canonical text form (sorted key = value
lines) which is echoed verbatim into checkpoints and reports, and a
short content hash for labeling derived artifacts.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass


class ConfigError(Exception):
    """One or more configuration problems; ``problems`` lists them all."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("configuration invalid:\n  " +
                         "\n  ".join(self.problems))


@dataclass(frozen=True)
class Spec:
    kind: str             # int | float | bool | str | int_list | float_list
    default: object
    check: object = None  # value -> error message or None
    help: str = ""


def _positive(v):
    return None if v > 0 else f"must be positive, got {v}"


def _nonneg(v):
    return None if v >= 0 else f"must be nonnegative, got {v}"


def _choice(*opts):
    def check(v):
        return None if v in opts else f"must be one of {sorted(opts)}, got {v!r}"
    return check


def _in_unit(v):
    return None if 0 < v <= 1 else f"must be in (0, 1], got {v}"


def _frac(v):
    return None if 0 <= v < 1 else f"must be in [0, 1), got {v}"


SCHEMA = {
    # scene generation and dataset shape
    "data.dir": Spec("str", "data", help="dataset directory"),
    "data.n_scenes": Spec("int", 64, _positive),
    "data.seed_start": Spec("int", 0, _nonneg),
    "data.difficulty": Spec("float", 1.0, _nonneg),
    "data.cameras": Spec("int", 6, _choice(1, 2, 4, 6)),
    "data.image_h": Spec("int", 32, _positive),
    "data.image_w": Spec("int", 64, _positive),
    "data.cam_latent_h": Spec("int", 4, _positive),
    "data.cam_latent_w": Spec("int", 8, _positive),
    "data.bev_cells": Spec("int", 32, _positive),
    "data.bev_latent": Spec("int", 8, _positive),
    "data.extent_m": Spec("float", 80.0, _positive),
    "data.fov_deg": Spec("float", 70.0,
                         lambda v: None if 0 < v < 180 else
                         f"must be in (0, 180), got {v}"),
    # first-stage autoencoders
    "vq.kind": Spec("str", "image", _choice("image", "bev")),
    "vq.codebook": Spec("int", 256,
                        lambda v: None if v >= 2 else f"needs >= 2 codes, got {v}"),
    "vq.dim": Spec("int", 32, _positive),
    "vq.base": Spec("int", 16, _positive),
    "vq.stages": Spec("int", 3, _positive),
    "vq.steps": Spec("int", 400, _positive),
    "vq.batch": Spec("int", 8, _positive),
    "vq.lr": Spec("float", 2e-3, _positive),
    "vq.reseed_after": Spec("int", 200, _positive),
    "vq.checkpoint": Spec("str", "vq_image.ckpt"),
    "vq.log": Spec("str", "vq_train.csv"),
    # transformer prior
    "prior.layers": Spec("int", 4, _positive),
    "prior.heads": Spec("int", 4, _positive),
    "prior.width": Spec("int", 128, _positive),
    "prior.dropout": Spec("float", 0.0, _frac),
    "prior.steps": Spec("int", 1500, _positive),
    "prior.batch": Spec("int", 8, _positive),
    "prior.lr": Spec("float", 3e-4, _positive),
    "prior.beta1": Spec("float", 0.9, _frac),
    "prior.beta2": Spec("float", 0.95, _frac),
    "prior.weight_decay": Spec("float", 0.01, _nonneg),
    "prior.clip": Spec("float", 50.0, _positive),
    "prior.w_fg": Spec("float", 5.0,
                       lambda v: None if v >= 1 else f"must be >= 1, got {v}"),
    "prior.center_out": Spec("bool", True),
    "prior.camera_bias": Spec("bool", True),
    "prior.spatial_embed": Spec("bool", True),
    "prior.normalize_directions": Spec("bool", False),
    "prior.pure_direction": Spec("bool", False),
    "prior.theta_mode": Spec("str", "factored",
                             _choice("factored", "full", "none")),
    "prior.attention": Spec("str", "dense", _choice("dense", "sparse")),
    "prior.density": Spec("float", 0.35, _in_unit),
    "prior.window": Spec("int", 96, _positive),
    "prior.block": Spec("int", 16, _positive),
    "prior.image_vq": Spec("str", "vq_image.ckpt"),
    "prior.bev_vq": Spec("str", "vq_bev.ckpt"),
    "prior.checkpoint": Spec("str", "prior.ckpt"),
    "prior.log": Spec("str", "prior_train.csv"),
    "prior.ckpt_every": Spec("int", 0, _nonneg),
    # sampling
    "sample.prior": Spec("str", "prior.ckpt"),
    "sample.count": Spec("int", 1, _positive),
    "sample.temperature": Spec("float", 1.0, _nonneg),
    "sample.top_k": Spec("int", 32, _nonneg, help="0 disables top-k"),
    "sample.source_index": Spec("int", 0, _nonneg),
    "sample.provide_views": Spec("str", "",
                                 help="comma-separated camera names"),
    # evaluation
    "eval.prior": Spec("str", "prior.ckpt"),
    "eval.holdout": Spec("int", 32, _positive),
    "eval.iou_layouts": Spec("int", 16, _nonneg),
    "eval.batch": Spec("int", 16, _positive),
    "eval.ablations": Spec("str", "", help="name=ckpt[,name=ckpt...]"),
    # attention benchmark
    "bench.seq_lens": Spec("int_list", (512,)),
    "bench.densities": Spec("float_list", (0.25, 0.35, 0.5, 1.0)),
    "bench.block": Spec("int", 16, _positive),
    "bench.window": Spec("int", 96, _positive),
    "bench.head_dim": Spec("int", 16, _positive),
    "bench.n_bev": Spec("int", 64, _nonneg),
    "bench.repeats": Spec("int", 3, _positive),
    # run-wide
    "run.seed": Spec("int", 0, _nonneg),
    "run.out": Spec("str", "out"),
    "run.threads": Spec("int", 0, _nonneg,
                        help="0 = library default; BEVGEN_THREADS wins"),
}

_KEY_RE = re.compile(r"^[a-z][a-z0-9_.]*$")


def _parse_value(kind, text):
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "int_list":
        return tuple(int(p) for p in text.split(",") if p.strip())
    if kind == "float_list":
        return tuple(float(p) for p in text.split(",") if p.strip())
    return text


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def read_raw(path, _seen=None):
    """Resolve a config file (with includes) to an ordered key->string map."""
    path = os.path.abspath(os.fspath(path))
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigError([f"include cycle at {path}"])
    seen.add(path)
    if not os.path.isfile(path):
        raise ConfigError([f"config file not found: {path}"])
    raw, problems = {}, []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("include ") or line == "include":
                target = line[len("include"):].strip()
                if not target:
                    problems.append(f"{path}:{lineno}: include without a path")
                    continue
                if not os.path.isabs(target):
                    target = os.path.join(os.path.dirname(path), target)
                raw.update(read_raw(target, seen))
                continue
            if "=" not in line:
                problems.append(f"{path}:{lineno}: expected 'key = value', "
                                f"got {line!r}")
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not _KEY_RE.match(key):
                problems.append(f"{path}:{lineno}: malformed key {key!r}")
                continue
            raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def validate(raw):
    """Raw string map -> typed value map; raises with every violation."""
    values, problems = {}, []
    for key, text in raw.items():
        spec = SCHEMA.get(key)
        if spec is None:
            problems.append(f"{key}: unknown key")
            continue
        try:
            value = _parse_value(spec.kind, text)
        except ValueError:
            problems.append(f"{key}: expected {spec.kind}, got {text!r}")
            continue
        err = spec.check(value) if spec.check else None
        if err:
            problems.append(f"{key}: {err}")
            continue
        values[key] = value
    for key, spec in SCHEMA.items():
        values.setdefault(key, spec.default)
    problems.extend(_cross_checks(values))
    if problems:
        raise ConfigError(sorted(problems))
    return values


def _cross_checks(v):
    problems = []
    if v["data.image_h"] % v["data.cam_latent_h"]:
        problems.append("data.cam_latent_h: must divide data.image_h")
    if v["data.image_w"] % v["data.cam_latent_w"]:
        problems.append("data.cam_latent_w: must divide data.image_w")
    if v["data.bev_cells"] % v["data.bev_latent"]:
        problems.append("data.bev_latent: must divide data.bev_cells")
    if v["prior.width"] % v["prior.heads"]:
        problems.append("prior.heads: must divide prior.width")
    for s in v["bench.seq_lens"]:
        if s <= 0 or s % v["bench.block"]:
            problems.append(
                f"bench.seq_lens: {s} is not a positive multiple of "
                f"bench.block ({v['bench.block']})")
    return problems


class RunConfig:
    """Validated, typed configuration with a canonical echo and hash."""

    def __init__(self, values):
        self.values = dict(values)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def text(self):
        return "\n".join(f"{k} = {_format_value(self.values[k])}"
                         for k in sorted(self.values)) + "\n"

    @property
    def hash(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, **overrides):
        merged = dict(self.values)
        for key, value in overrides.items():
            if value is not None:
                merged[key] = value
        return RunConfig(merged)


def load_config(path):
    """Parse, resolve includes, validate; raises ConfigError on problems."""
    return RunConfig(validate(read_raw(path)))


def config_from_text(text):
    """Rebuild a RunConfig from an echoed canonical text block."""
    raw = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    return RunConfig(validate(raw))
