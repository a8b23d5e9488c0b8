"""Convolutional keypoint detector.

Backbone: per block, a same-extent conv, instance norm, ReLU, then a
stride-2 conv (again with IN + ReLU) halving every spatial extent. A
final 1x1 conv maps to one activation map per keypoint, and a spatial
softmax center-of-mass head turns each map into one normalized
coordinate. An FC head is available as a config switch for comparison
runs; its outputs are unconstrained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensor as tc
from .errors import NonFiniteActivation, ShapeMismatch
from .transforms import KeypointSet, normalized_grid


@dataclass
class DetectorConfig:
    d: int = 2
    num_keypoints: int = 16
    num_blocks: int = 2
    channels: tuple = (16, 32)
    head: str = "com"  # com | fc
    com_temperature: float = 10.0
    input_extent: int = 64  # per-axis extent; required by the fc head
    in_eps: float = 1e-5

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != self.num_blocks:
            raise ValueError("channels must list one width per block")
        if self.input_extent % (2**self.num_blocks) != 0:
            raise ValueError("input extent must be divisible by 2^num_blocks")

    @property
    def coarse_extent(self):
        return self.input_extent // (2**self.num_blocks)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DetectorWeights:
    config: DetectorConfig
    params: dict  # name -> np.ndarray, insertion-ordered
    seed: int

    def copy(self):
        return DetectorWeights(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            seed=self.seed,
        )


def init_weights(config: DetectorConfig, seed: int = 0) -> DetectorWeights:
    """Fan-in-scaled uniform init, deterministic given seed."""
    rng = np.random.default_rng(seed)
    params = {}

    def conv_param(name, cout, cin, k):
        fan_in = cin * k**config.d
        limit = np.sqrt(1.0 / fan_in)
        params[f"{name}.w"] = rng.uniform(-limit, limit, (cout, cin) + (k,) * config.d)
        params[f"{name}.b"] = rng.uniform(-limit, limit, (cout,))

    cin = 1
    for i, cout in enumerate(config.channels):
        conv_param(f"block{i}.conv", cout, cin, 3)
        conv_param(f"block{i}.down", cout, cout, 3)
        cin = cout
    if config.head == "com":
        conv_param("head", config.num_keypoints, cin, 1)
    else:
        feat = cin * config.coarse_extent**config.d
        limit = np.sqrt(1.0 / feat)
        params["head.w"] = rng.uniform(
            -limit, limit, (config.num_keypoints * config.d, feat)
        )
        params["head.b"] = rng.uniform(-limit, limit, (config.num_keypoints * config.d,))
    return DetectorWeights(config=config, params=params, seed=seed)


def com_layer_v(activations, temperature=1.0):
    """Spatial-softmax center of mass on a Var of shape (N, *spatial)."""
    if not np.all(np.isfinite(activations.value)):
        raise NonFiniteActivation("activation maps contain non-finite values")
    n = activations.value.shape[0]
    spatial = activations.value.shape[1:]
    s = int(np.prod(spatial))
    flat = ad.reshape(activations, (n, s))
    # constant max shift: stabilizes exp without changing value or gradient
    shift = ad.Var(flat.value.max(axis=1, keepdims=True), op="const")
    e = ad.exp((flat - shift) * temperature)
    w = e / ad.vsum(e, axis=1, keepdims=True)
    coords = ad.Var(normalized_grid(spatial), op="const")  # (S, D)
    return w @ coords


def com_layer(activations, temperature=1.0) -> KeypointSet:
    out = com_layer_v(ad.Var(np.asarray(activations, dtype=np.float64), op="const"), temperature)
    return KeypointSet(out.value)


def forward(weights: DetectorWeights, image, want_features=False):
    """Forward pass on a Var or array image; returns keypoints Var (N, D).

    With want_features=True also returns the post-block feature Vars
    (used by the layer-correlation diagnostic).
    """
    cfg = weights.config
    img = image if isinstance(image, ad.Var) else ad.Var(np.asarray(image, dtype=np.float64), op="const")
    if img.value.ndim != cfg.d:
        raise ShapeMismatch(f"expected a {cfg.d}-D image, got shape {img.value.shape}")
    for n in img.value.shape:
        if n % (2**cfg.num_blocks) != 0:
            raise ShapeMismatch(
                f"extent {n} not divisible by 2^{cfg.num_blocks}"
            )
    p = {k: (v if isinstance(v, ad.Var) else ad.Var(v)) for k, v in weights.params.items()}

    x = ad.reshape(img, (1,) + img.value.shape)
    feats = []
    for i in range(cfg.num_blocks):
        x = ad.relu(ad.instance_norm(
            ad.conv_nd(x, p[f"block{i}.conv.w"], p[f"block{i}.conv.b"], stride=1), eps=cfg.in_eps))
        x = ad.relu(ad.instance_norm(
            ad.conv_nd(x, p[f"block{i}.down.w"], p[f"block{i}.down.b"], stride=2), eps=cfg.in_eps))
        feats.append(x)

    if cfg.head == "com":
        acts = ad.conv_nd(x, p["head.w"], p["head.b"], stride=1, pad=0)
        kp = com_layer_v(acts, cfg.com_temperature)
    else:
        flat = ad.reshape(x, (x.value.size, 1))
        out = p["head.w"] @ flat + ad.reshape(p["head.b"], (cfg.num_keypoints * cfg.d, 1))
        kp = ad.reshape(out, (cfg.num_keypoints, cfg.d))

    if want_features:
        return kp, feats, p
    return kp, p


# incremented on every detect() call; the lambda-sweep caching contract
# is verified against this counter
DETECT_CALLS = 0


def detect(weights: DetectorWeights, image) -> KeypointSet:
    """Detect N keypoints in normalized coordinates."""
    global DETECT_CALLS
    DETECT_CALLS += 1
    data = (
        np.asarray(image, dtype=np.float64)
        if isinstance(image, np.ndarray)
        else np.asarray(image.data, dtype=np.float64)
        if hasattr(image, "data")
        else np.asarray(image, dtype=np.float64)
    )
    kp, _ = forward(weights, data)
    return KeypointSet(kp.value)


# --- persistence -----------------------------------------------------------


def save_weights(path, weights: DetectorWeights):
    """Weights directory: manifest.json plus one KMT tensor per parameter."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": weights.config.to_dict(),
        "seed": weights.seed,
        "params": [
            {"name": name, "shape": list(arr.shape), "file": f"{name}.kmt"}
            for name, arr in weights.params.items()
        ],
    }
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    for name, arr in weights.params.items():
        tc.write_kmt(path / f"{name}.kmt", arr.astype(np.float32))


def load_weights(path) -> DetectorWeights:
    path = Path(path)
    with open(path / "manifest.json") as f:
        manifest = json.load(f)
    cfg = manifest["config"]
    cfg["channels"] = tuple(cfg["channels"])
    config = DetectorConfig.from_dict(cfg)
    params = {}
    for entry in manifest["params"]:
        arr = tc.read_kmt(path / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ShapeMismatch(f"parameter {entry['name']}: {arr.shape} != {entry['shape']}")
        params[entry["name"]] = arr
    return DetectorWeights(config=config, params=params, seed=manifest["seed"])
