"""Two-tower encoder: a patch-MLP image tower and a token-MLP text tower.

Image tower: non-overlapping patches are flattened, linearly projected to a
hidden width, pushed through L shared tanh layers per patch, mean-pooled
over patches, projected to the embedding dim and L2-normalized. The text
tower mirrors it: token embedding table, L tanh layers per token (with
optional dropout, the text tower's regularization trick), mean pooling over
tokens, output projection, L2 normalization.

The per-unit nonlinearity before pooling matters: pooling first would
average patch contents into a near-uniform blur and identities would become
indistinguishable. After the tanh stack, pooling sees a bag of nonlinear
patch/token descriptors, which is enough to separate attribute bundles.

All gradients are hand-derived; `backward_image` / `backward_text` implement
the exact chain rule for the forward passes here, and the test suite holds
them against finite differences end to end.

Freezing is tracked per module ("img.patch", "txt.hidden.2", ...). Frozen
modules still participate in the forward pass but receive zero updates.
Dropped text layers are skipped by the forward pass entirely and excluded
from the trainable-parameter count.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import Rng, ShapeMismatch, l2_normalize_rows, l2_normalize_rows_backward

CHECKPOINT_MAGIC = b"TTLAB001"
MIN_TAU = 0.01
UNK_ID = 0


class BadModule(KeyError):
    """A module name does not exist in this model."""


class BadLayerId(ValueError):
    """A hidden-layer index is outside the tower's range."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and regularization switches for both towers."""

    embed_dim: int = 32
    hidden_dim: int = 64
    image_layers: int = 3
    text_layers: int = 3
    patch_size: int = 8
    image_height: int = 48
    image_width: int = 24
    vocab: tuple = ()
    dropout: float = 0.0
    tau_init: float = 0.07
    dropped_text_layers: tuple = ()

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.image_layers, self.text_layers) < 1:
            raise ValueError("dims and layer counts must be >= 1")
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError(
                f"patch size {self.patch_size} must divide "
                f"{self.image_height}x{self.image_width}"
            )
        if not (0 <= self.dropout < 1):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (self.tau_init > 0):
            raise ValueError(f"tau_init must be > 0, got {self.tau_init}")
        for i in self.dropped_text_layers:
            if not (0 <= i < self.text_layers):
                raise BadLayerId(f"dropped text layer {i} outside [0, {self.text_layers})")

    @property
    def patch_count(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def patch_pixels(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def vocab_rows(self) -> int:
        return len(self.vocab) + 1  # row 0 is the unknown-token bucket


@dataclass
class Model:
    config: ModelConfig
    params: dict
    frozen: set = field(default_factory=set)

    _vocab_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._vocab_index:
            self._vocab_index = {w: i + 1 for i, w in enumerate(self.config.vocab)}

    def token_ids(self, tokens) -> np.ndarray:
        return np.array([self._vocab_index.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    @property
    def tau(self) -> float:
        return float(np.exp(self.params["log_tau"]))

    def module_names(self) -> list:
        seen = []
        for key in self.params:
            name = module_of(key)
            if name not in seen:
                seen.append(name)
        return seen

    def module_keys(self, name: str) -> list:
        keys = [k for k in self.params if module_of(k) == name]
        if not keys:
            raise BadModule(f"no module named '{name}'")
        return keys


def module_of(key: str) -> str:
    """Parameter key -> owning module name ('img.hidden.2.W' -> 'img.hidden.2')."""
    if key == "log_tau":
        return "log_tau"
    return key.rsplit(".", 1)[0]


def _uniform_init(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, rng: Rng) -> Model:
    """Fresh parameters, every tensor from its own named substream so the
    initialization of one tensor never shifts another's draws."""
    h, d = config.hidden_dim, config.embed_dim
    params = {}

    def make(key, shape, fan_in):
        params[key] = _uniform_init(rng.named(key), shape, fan_in)

    ppc = config.patch_pixels
    make("img.patch.W", (ppc, h), ppc)
    make("img.patch.b", (h,), ppc)
    for i in range(config.image_layers):
        make(f"img.hidden.{i}.W", (h, h), h)
        make(f"img.hidden.{i}.b", (h,), h)
    make("img.out.W", (h, d), h)
    make("img.out.b", (d,), h)

    # The embedding table maps one-hot tokens to h-dim rows; its rows are
    # scaled by the receiving width so token signals start at the same
    # magnitude as patch signals.
    make("txt.embed.W", (config.vocab_rows, h), h)
    for i in range(config.text_layers):
        make(f"txt.hidden.{i}.W", (h, h), h)
        make(f"txt.hidden.{i}.b", (h,), h)
    make("txt.out.W", (h, d), h)
    make("txt.out.b", (d,), h)

    params["log_tau"] = np.array(np.log(config.tau_init))
    return Model(config=config, params=params)


def parameter_count(model: Model, trainable_only: bool = False) -> int:
    """Total (or trainable) scalar parameter count. Dropped text layers
    never count as trainable; frozen modules are excluded when asked."""
    total = 0
    dropped = {f"txt.hidden.{i}" for i in model.config.dropped_text_layers}
    for key, value in model.params.items():
        mod = module_of(key)
        if trainable_only and (mod in model.frozen or mod in dropped):
            continue
        total += int(np.asarray(value).size)
    return total


def freeze(model: Model, modules) -> Model:
    """Mark modules as frozen (zero updates). Unknown names are rejected."""
    names = set(model.module_names())
    for m in modules:
        if m not in names:
            raise BadModule(f"no module named '{m}'; known: {sorted(names)}")
    model.frozen |= set(modules)
    return model


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ImageCache:
    patches: np.ndarray  # (B, P, ppc)
    pre_acts: list  # per hidden layer, (B, P, h) tanh outputs
    first: np.ndarray  # patch projection output (B, P, h)
    pooled: np.ndarray  # (B, h)
    raw_out: np.ndarray  # (B, d) before normalization


@dataclass
class TextCache:
    ids: np.ndarray  # (T,) concatenated token ids
    lengths: np.ndarray  # (B,)
    embedded: np.ndarray  # (T, h)
    acts: list  # per kept layer: (layer index, tanh output, mask or None, layer output)
    pooled: np.ndarray
    raw_out: np.ndarray


def _extract_patches(config: ModelConfig, images: np.ndarray) -> np.ndarray:
    b = images.shape[0]
    p = config.patch_size
    gh, gw = config.image_height // p, config.image_width // p
    x = images.reshape(b, gh, p, gw, p, 3)
    x = x.transpose(0, 1, 3, 2, 4, 5)  # (B, gh, gw, p, p, 3)
    return x.reshape(b, gh * gw, p * p * 3)


def encode_image(model: Model, images) -> tuple:
    """Encode a (B, H, W, 3) stack; returns (embeddings, cache).

    Embeddings are row-normalized (B, embed_dim). The cache carries every
    intermediate needed by backward_image.
    """
    cfg = model.config
    images = np.asarray(images, dtype=np.float64)
    expect = (cfg.image_height, cfg.image_width, 3)
    if images.ndim != 4 or images.shape[1:] != expect:
        raise ShapeMismatch(f"images must be (B, {expect[0]}, {expect[1]}, 3), got {images.shape}")
    p = model.params
    patches = _extract_patches(cfg, images)
    first = patches @ p["img.patch.W"] + p["img.patch.b"]
    act = first
    pre_acts = []
    for i in range(cfg.image_layers):
        act = np.tanh(act @ p[f"img.hidden.{i}.W"] + p[f"img.hidden.{i}.b"])
        pre_acts.append(act)
    pooled = act.mean(axis=1)
    raw = pooled @ p["img.out.W"] + p["img.out.b"]
    z = l2_normalize_rows(raw)
    return z, ImageCache(patches=patches, pre_acts=pre_acts, first=first, pooled=pooled, raw_out=raw)


def backward_image(model: Model, cache: ImageCache, grad_embed: np.ndarray, grads: dict):
    """Accumulate parameter gradients for one encode_image call into `grads`."""
    cfg = model.config
    p = model.params
    g_raw = l2_normalize_rows_backward(cache.raw_out, grad_embed)

    _acc(grads, "img.out.W", cache.pooled.T @ g_raw)
    _acc(grads, "img.out.b", g_raw.sum(axis=0))
    g_pooled = g_raw @ p["img.out.W"].T

    n_patches = cache.patches.shape[1]
    g_act = np.repeat(g_pooled[:, None, :], n_patches, axis=1) / n_patches
    for i in reversed(range(cfg.image_layers)):
        act = cache.pre_acts[i]
        below = cache.pre_acts[i - 1] if i > 0 else cache.first
        g_z = g_act * (1.0 - act * act)
        flat_in = below.reshape(-1, below.shape[-1])
        flat_gz = g_z.reshape(-1, g_z.shape[-1])
        _acc(grads, f"img.hidden.{i}.W", flat_in.T @ flat_gz)
        _acc(grads, f"img.hidden.{i}.b", flat_gz.sum(axis=0))
        g_act = g_z @ p[f"img.hidden.{i}.W"].T

    flat_patches = cache.patches.reshape(-1, cache.patches.shape[-1])
    flat_g = g_act.reshape(-1, g_act.shape[-1])
    _acc(grads, "img.patch.W", flat_patches.T @ flat_g)
    _acc(grads, "img.patch.b", flat_g.sum(axis=0))


def encode_text(model: Model, token_lists, train: bool = False, rng: Rng | None = None) -> tuple:
    """Encode a batch of token sequences; returns (embeddings, cache).

    Sequences are capped at 77 tokens. In train mode with a nonzero
    dropout rate an Rng must be supplied; inverted dropout masks the tanh
    activations of each kept hidden layer.
    """
    cfg = model.config
    p = model.params
    rate = cfg.dropout if train else 0.0
    if rate > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")

    capped = [list(t)[:77] for t in token_lists]
    lengths = np.array([len(t) for t in capped], dtype=np.int64)
    if (lengths == 0).any():
        raise ValueError("cannot encode an empty token sequence")
    ids = np.concatenate([model.token_ids(t) for t in capped])
    embedded = p["txt.embed.W"][ids]

    dropped = set(cfg.dropped_text_layers)
    act = embedded
    acts = []
    for i in range(cfg.text_layers):
        if i in dropped:
            continue
        pre = np.tanh(act @ p[f"txt.hidden.{i}.W"] + p[f"txt.hidden.{i}.b"])
        mask = None
        act = pre
        if rate > 0:
            mask = (rng.random(size=pre.shape) >= rate) / (1.0 - rate)
            act = pre * mask
        acts.append((i, pre, mask, act))

    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    pooled = np.add.reduceat(act, starts, axis=0) / lengths[:, None]
    raw = pooled @ p["txt.out.W"] + p["txt.out.b"]
    z = l2_normalize_rows(raw)
    return z, TextCache(
        ids=ids, lengths=lengths, embedded=embedded, acts=acts, pooled=pooled, raw_out=raw
    )


def backward_text(model: Model, cache: TextCache, grad_embed: np.ndarray, grads: dict):
    """Accumulate parameter gradients for one encode_text call into `grads`."""
    p = model.params
    g_raw = l2_normalize_rows_backward(cache.raw_out, grad_embed)

    _acc(grads, "txt.out.W", cache.pooled.T @ g_raw)
    _acc(grads, "txt.out.b", g_raw.sum(axis=0))
    g_pooled = g_raw @ p["txt.out.W"].T

    g_rows = np.repeat(g_pooled / cache.lengths[:, None], cache.lengths, axis=0)
    for pos in reversed(range(len(cache.acts))):
        i, pre, mask, _ = cache.acts[pos]
        if mask is not None:
            g_rows = g_rows * mask
        g_z = g_rows * (1.0 - pre * pre)
        # input to layer i is the previous layer's post-mask output
        below = cache.acts[pos - 1][3] if pos > 0 else cache.embedded
        _acc(grads, f"txt.hidden.{i}.W", below.T @ g_z)
        _acc(grads, f"txt.hidden.{i}.b", g_z.sum(axis=0))
        g_rows = g_z @ p[f"txt.hidden.{i}.W"].T

    g_table = np.zeros_like(p["txt.embed.W"])
    np.add.at(g_table, cache.ids, g_rows)
    _acc(grads, "txt.embed.W", g_table)


def _acc(grads: dict, key: str, value: np.ndarray):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


# ---------------------------------------------------------------------------
# checkpoint io


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "embed_dim": config.embed_dim,
        "hidden_dim": config.hidden_dim,
        "image_layers": config.image_layers,
        "text_layers": config.text_layers,
        "patch_size": config.patch_size,
        "image_height": config.image_height,
        "image_width": config.image_width,
        "vocab": list(config.vocab),
        "dropout": config.dropout,
        "tau_init": config.tau_init,
        "dropped_text_layers": list(config.dropped_text_layers),
    }


def _config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        embed_dim=d["embed_dim"],
        hidden_dim=d["hidden_dim"],
        image_layers=d["image_layers"],
        text_layers=d["text_layers"],
        patch_size=d["patch_size"],
        image_height=d["image_height"],
        image_width=d["image_width"],
        vocab=tuple(d["vocab"]),
        dropout=d["dropout"],
        tau_init=d["tau_init"],
        dropped_text_layers=tuple(d["dropped_text_layers"]),
    )


def save_checkpoint(model: Model, path):
    """Versioned binary key->tensor map; bit-exact and byte-deterministic.

    Layout: magic, uint64 header length, a JSON header (version, config,
    frozen set, tensor index with shapes), then each tensor's raw float64
    little-endian bytes in header order. Keys are sorted so identical
    models always produce identical files.
    """
    keys = sorted(model.params)
    header = {
        "version": 1,
        "config": _config_to_dict(model.config),
        "frozen": sorted(model.frozen),
        "tensors": [{"key": k, "shape": list(model.params[k].shape)} for k in keys],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in keys:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        params = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
            params[spec["key"]] = arr.copy()
    return Model(
        config=_config_from_dict(header["config"]),
        params=params,
        frozen=set(header["frozen"]),
    )


def clone_model(model: Model) -> Model:
    return Model(
        config=model.config,
        params={k: v.copy() for k, v in model.params.items()},
        frozen=set(model.frozen),
    )


def with_dropped_text_layers(model: Model, layer_ids) -> Model:
    """A copy of the model whose listed text layers are skipped in forward."""
    cfg = replace(model.config, dropped_text_layers=tuple(sorted(layer_ids)))
    return Model(config=cfg, params={k: v.copy() for k, v in model.params.items()},
                 frozen=set(model.frozen))
