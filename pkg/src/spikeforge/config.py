"""JSON run configuration with defaults and strict key checking."""

from __future__ import annotations

import copy
import json
import os
import re
from typing import Any

from .network import LAYER_KINDS, LayerSpec, NetworkSpec
from .neurons import NeuronConfig, NeuronKind
from .train import TrainConfig

DEFAULT_LAYERS = [
    {"kind": "flatten"},
    {"kind": "dense", "in": 784, "out": 256},
    {"kind": "tdbn", "channels": 256},
    {"kind": "neuron"},
    {"kind": "dense", "in": 256, "out": 10},
    {"kind": "readout"},
]

DEFAULTS: dict[str, dict[str, Any]] = {
    "dataset": {"name": "mnist", "paths": None},
    "model": {"layers": DEFAULT_LAYERS, "T": 4},
    "neuron": {"kind": "srif", "v_th": 0.5, "tau": 0.5, "use_mpr": True,
               "surrogate_width": 1.0, "detach_reset": False},
    "train": {"epochs": 5, "batch": 128, "lr0": 0.01, "momentum": 0.9, "seed": 0,
              "eval_every": 1},
    "report": {"bins": 60, "out_dir": "runs"},
}

PATH_KEYS = {
    "mnist": ("train_images", "train_labels", "test_images", "test_labels"),
    "cifar10": ("train", "test"),
}

LAYER_KEYS = {
    "dense": {"in", "out", "bias"},
    "conv": {"in", "out", "kernel", "stride", "pad", "bias"},
    "tdbn": {"channels", "alpha", "eps", "momentum"},
    "neuron": set(),
    "flatten": set(),
    "pool_avg": {"size"},
    "readout": set(),
}

_TYPES = {
    ("model", "T"): int,
    ("neuron", "kind"): str,
    ("neuron", "v_th"): (int, float),
    ("neuron", "tau"): (int, float),
    ("neuron", "use_mpr"): bool,
    ("neuron", "surrogate_width"): (int, float),
    ("neuron", "detach_reset"): bool,
    ("train", "epochs"): int,
    ("train", "batch"): int,
    ("train", "lr0"): (int, float),
    ("train", "momentum"): (int, float),
    ("train", "seed"): int,
    ("train", "eval_every"): int,
    ("report", "bins"): int,
    ("report", "out_dir"): str,
    ("dataset", "name"): str,
}


class ConfigError(ValueError):
    """Invalid configuration, reported against a line of the source file."""

    def __init__(self, message: str, line: int = 1, source: str = "<config>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line


class _Locator:
    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def line_of(self, *keys: str) -> int:
        """First line mentioning the last key found, searching keys in order."""
        line = 1
        start = 0
        for key in keys:
            pat = re.compile(r'"%s"\s*:' % re.escape(str(key)))
            for i in range(start, len(self.lines)):
                if pat.search(self.lines[i]):
                    line, start = i + 1, i
                    break
        return line

    def error(self, message: str, *keys: str) -> ConfigError:
        return ConfigError(message, self.line_of(*keys), self.source)


def _check_type(loc: _Locator, section: str, key: str, value) -> None:
    want = _TYPES.get((section, key))
    if want is None:
        return
    ok = isinstance(value, want) and not (want is not bool and isinstance(value, bool))
    if not ok:
        raise loc.error(f"{section}.{key} has type {type(value).__name__}", section, key)


def resolve(raw: dict, loc: _Locator, check_paths: bool = True) -> dict:
    """Merge ``raw`` over the defaults and validate every field."""
    if not isinstance(raw, dict):
        raise loc.error("top level must be a JSON object")
    resolved = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise loc.error(f"unknown section {section!r}", section)
        if not isinstance(body, dict):
            raise loc.error(f"section {section!r} must be an object", section)
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise loc.error(f"unknown key {key!r} in section {section!r}", section, key)
            _check_type(loc, section, key, value)
            resolved[section][key] = value

    ds = resolved["dataset"]
    if ds["name"] not in PATH_KEYS:
        raise loc.error(f"unknown dataset {ds['name']!r}; choose from {sorted(PATH_KEYS)}",
                        "dataset", "name")
    paths = ds["paths"]
    if not isinstance(paths, dict):
        raise loc.error("dataset.paths must be an object", "dataset", "paths")
    for key in paths:
        if key not in PATH_KEYS[ds["name"]]:
            raise loc.error(f"unknown key {key!r} in dataset.paths", "paths", key)
    for key in PATH_KEYS[ds["name"]]:
        if key not in paths:
            raise loc.error(f"dataset.paths.{key} is required", "dataset", "paths")
        if check_paths:
            files = paths[key] if isinstance(paths[key], list) else [paths[key]]
            for p in files:
                if not isinstance(p, str) or not os.path.isfile(p):
                    raise loc.error(f"dataset file not found: {p}", "paths", key)

    model = resolved["model"]
    if model["T"] < 1:
        raise loc.error("model.T must be >= 1", "model", "T")
    if not isinstance(model["layers"], list) or not model["layers"]:
        raise loc.error("model.layers must be a non-empty list", "model", "layers")
    for i, layer in enumerate(model["layers"]):
        if not isinstance(layer, dict) or layer.get("kind") not in LAYER_KINDS:
            raise loc.error(f"model.layers[{i}] needs a kind from {list(LAYER_KINDS)}",
                            "model", "layers")
        extra = set(layer) - {"kind"} - LAYER_KEYS[layer["kind"]]
        if extra:
            raise loc.error(f"model.layers[{i}] has unknown key(s) {sorted(extra)}",
                            "layers", sorted(extra)[0])

    neuron = resolved["neuron"]
    try:
        NeuronKind(neuron["kind"])
    except ValueError:
        raise loc.error(f"neuron.kind must be one of if, lif, srif", "neuron", "kind") from None
    try:
        neuron_config(resolved)
    except ValueError as e:
        raise loc.error(str(e), "neuron") from None

    tr = resolved["train"]
    for key, lo in (("epochs", 1), ("batch", 1), ("eval_every", 1)):
        if tr[key] < lo:
            raise loc.error(f"train.{key} must be >= {lo}", "train", key)
    if tr["lr0"] < 0:
        raise loc.error("train.lr0 must be non-negative", "train", "lr0")
    if resolved["report"]["bins"] < 2:
        raise loc.error("report.bins must be >= 2", "report", "bins")
    return resolved


def load_config(path: str | os.PathLike, check_paths: bool = True) -> dict:
    """Read, merge and validate a run configuration file."""
    source = os.fspath(path)
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", 1, source) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", e.lineno, source) from None
    return resolve(raw, _Locator(text, source), check_paths)


def neuron_config(resolved: dict) -> NeuronConfig:
    n = resolved["neuron"]
    return NeuronConfig(kind=n["kind"], v_th=float(n["v_th"]), tau=float(n["tau"]),
                        surrogate_width=float(n["surrogate_width"]), use_mpr=n["use_mpr"],
                        detach_reset=n["detach_reset"])


def network_spec(resolved: dict, input_shape=None) -> NetworkSpec:
    cfg = neuron_config(resolved)
    layers = []
    for layer in resolved["model"]["layers"]:
        params = {k: v for k, v in layer.items() if k != "kind"}
        if layer["kind"] == "neuron":
            params["config"] = cfg
        elif layer["kind"] == "tdbn":
            params["v_th"] = cfg.v_th
        layers.append(LayerSpec(layer["kind"], params))
    return NetworkSpec(layers, T=resolved["model"]["T"], seed=resolved["train"]["seed"],
                       input_shape=input_shape)


def train_config(resolved: dict) -> TrainConfig:
    tr = resolved["train"]
    return TrainConfig(epochs=tr["epochs"], batch_size=tr["batch"], lr0=float(tr["lr0"]),
                       momentum=float(tr["momentum"]), T=resolved["model"]["T"], seed=tr["seed"],
                       neuron=neuron_config(resolved), eval_every=tr["eval_every"])


def output_dir(resolved: dict) -> str:
    return os.environ.get("SPIKEFORGE_OUT") or resolved["report"]["out_dir"]
