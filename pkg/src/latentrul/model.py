"""Encoder / vector-quantizer / decoder assembly, training, and persistence.

The encoder projects a (T, F) window to the model width, adds positional
encodings, runs a stack of self-attention layers, and maps the flattened
output to an (S, E) latent block. The block is snapped to the codebook, and
the decoder (an encoder-style stack over the S latent rows) pools it into a
single RUL estimate. Training minimizes the RUL error plus the codebook and
commitment terms; the quantization step passes gradients straight through.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn, vq
from .autodiff import Adam, Tensor, gather_rows, matmul, reshape, tmean
from .errors import NumericError, ValidationError
from .ingest import FeatureSpec, NormalizationStats
from .seeding import STREAM_PARAMS, STREAM_SHUFFLE, substream

FORMAT_VERSION = 1

# Training setups per C-MAPSS sub-dataset. The latent geometry (S=10, E=32)
# and the learning rate are shared; window length, batch size, epochs,
# codebook size, and the EMA factor differ.
PRESETS = {
    "FD001": dict(window_length=20, epochs=100, batch_size=100, codebook_size=25, ema_lambda=0.9),
    "FD002": dict(window_length=10, epochs=125, batch_size=256, codebook_size=45, ema_lambda=0.99),
    "FD003": dict(window_length=20, epochs=100, batch_size=100, codebook_size=25, ema_lambda=0.9),
    "FD004": dict(window_length=10, epochs=150, batch_size=256, codebook_size=60, ema_lambda=0.99),
}


@dataclass(frozen=True)
class ModelConfig:
    window_length: int
    n_features: int
    latent_len: int = 10        # S: rows in the latent block
    latent_dim: int = 32        # E: width of each latent row
    codebook_size: int = 25     # N_e
    model_dim: int = 48
    enc_layers: int = 3
    enc_heads: int = 3
    dec_layers: int = 2
    dec_heads: int = 3
    ffn_hidden: Optional[int] = None   # defaults to 4 * model_dim
    beta: float = 0.25
    learning_rate: float = 2e-4
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0
    rul_cap: float = 125.0
    one_based_positions: bool = False

    def __post_init__(self):
        for name in (
            "window_length", "n_features", "latent_len", "latent_dim",
            "codebook_size", "model_dim", "enc_layers", "enc_heads",
            "dec_layers", "dec_heads", "batch_size",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.model_dim % self.enc_heads != 0 or self.model_dim % self.dec_heads != 0:
            raise ValidationError(
                f"model_dim {self.model_dim} must divide by head counts "
                f"{self.enc_heads}/{self.dec_heads}"
            )
        if self.beta < 0 or self.learning_rate <= 0 or self.rul_cap <= 0:
            raise ValidationError("beta must be >= 0, learning_rate and rul_cap positive")

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.model_dim


# ----- parameters ---------------------------------------------------------------


def init_params(config: ModelConfig, rng: Optional[np.random.Generator] = None) -> dict:
    """Named parameter tensors, in a fixed insertion order.

    Without a generator, weights stay zero; useful for shape bookkeeping.
    """
    d = config.model_dim
    params: dict = {}

    def add(name, fan_in, fan_out=None):
        if fan_out is None:
            params[name] = Tensor(np.zeros(fan_in), requires_grad=True)
        elif rng is None:
            params[name] = Tensor(np.zeros((fan_in, fan_out)), requires_grad=True)
        else:
            params[name] = Tensor(nn.init_linear(rng, fan_in, fan_out), requires_grad=True)

    def add_stack(prefix, n_layers, n_heads):
        dk = d // n_heads
        for i in range(n_layers):
            for h in range(n_heads):
                add(f"{prefix}.{i}.attn.wq.{h}", d, dk)
                add(f"{prefix}.{i}.attn.wk.{h}", d, dk)
                add(f"{prefix}.{i}.attn.wv.{h}", d, dk)
            add(f"{prefix}.{i}.attn.wo", d, d)
            params[f"{prefix}.{i}.ln1.gain"] = Tensor(np.ones(d), requires_grad=True)
            add(f"{prefix}.{i}.ln1.bias", d)
            add(f"{prefix}.{i}.ffn.w1", d, config.ffn_width)
            add(f"{prefix}.{i}.ffn.b1", config.ffn_width)
            add(f"{prefix}.{i}.ffn.w2", config.ffn_width, d)
            add(f"{prefix}.{i}.ffn.b2", d)
            params[f"{prefix}.{i}.ln2.gain"] = Tensor(np.ones(d), requires_grad=True)
            add(f"{prefix}.{i}.ln2.bias", d)

    add("input_proj.w", config.n_features, d)
    add("input_proj.b", d)
    add_stack("encoder", config.enc_layers, config.enc_heads)
    add("to_latent.w", config.window_length * d, config.latent_len * config.latent_dim)
    add("to_latent.b", config.latent_len * config.latent_dim)
    if rng is None:
        params["codebook"] = Tensor(
            np.zeros((config.codebook_size, config.latent_dim)), requires_grad=True
        )
    else:
        params["codebook"] = Tensor(
            vq.init_codebook(config.codebook_size, config.latent_dim, rng), requires_grad=True
        )
    add("dec_proj.w", config.latent_dim, d)
    add("dec_proj.b", d)
    add_stack("decoder", config.dec_layers, config.dec_heads)
    add("head.w", d, 1)
    add("head.b", 1)
    return params


def _attention_weights(params: dict, prefix: str, n_heads: int) -> nn.AttentionWeights:
    return nn.AttentionWeights(
        wq=[params[f"{prefix}.wq.{h}"] for h in range(n_heads)],
        wk=[params[f"{prefix}.wk.{h}"] for h in range(n_heads)],
        wv=[params[f"{prefix}.wv.{h}"] for h in range(n_heads)],
        wo=params[f"{prefix}.wo"],
    )


def _stack(h: Tensor, params: dict, prefix: str, n_layers: int, n_heads: int) -> Tensor:
    # Post-norm residual arrangement: LN(x + sublayer(x)).
    for i in range(n_layers):
        attn = nn.multi_head_attention(h, _attention_weights(params, f"{prefix}.{i}.attn", n_heads))
        h = nn.layer_norm(h + attn, params[f"{prefix}.{i}.ln1.gain"], params[f"{prefix}.{i}.ln1.bias"])
        ff = nn.feed_forward(
            h,
            params[f"{prefix}.{i}.ffn.w1"], params[f"{prefix}.{i}.ffn.b1"],
            params[f"{prefix}.{i}.ffn.w2"], params[f"{prefix}.{i}.ffn.b2"],
        )
        h = nn.layer_norm(h + ff, params[f"{prefix}.{i}.ln2.gain"], params[f"{prefix}.{i}.ln2.bias"])
    return h


def encoder_forward(x: Tensor, params: dict, config: ModelConfig) -> Tensor:
    """(B, T, F) windows to the (B, S, E) continuous latent block."""
    if x.shape[-2:] != (config.window_length, config.n_features):
        raise ValueError(
            f"window shape {x.shape[-2:]} does not match config "
            f"({config.window_length}, {config.n_features})"
        )
    h = matmul(x, params["input_proj.w"]) + params["input_proj.b"]
    h = h + Tensor(nn.positional_encoding(config.window_length, config.model_dim,
                                          config.one_based_positions))
    h = _stack(h, params, "encoder", config.enc_layers, config.enc_heads)
    flat = reshape(h, (-1, config.window_length * config.model_dim))
    z = matmul(flat, params["to_latent.w"]) + params["to_latent.b"]
    return reshape(z, (-1, config.latent_len, config.latent_dim))


def decoder_forward(z: Tensor, params: dict, config: ModelConfig) -> Tensor:
    """(B, S, E) latent block to (B,) raw RUL estimates (unclamped)."""
    h = matmul(z, params["dec_proj.w"]) + params["dec_proj.b"]
    h = h + Tensor(nn.positional_encoding(config.latent_len, config.model_dim,
                                          config.one_based_positions))
    h = _stack(h, params, "decoder", config.dec_layers, config.dec_heads)
    pooled = tmean(h, axis=1)
    out = matmul(pooled, params["head.w"]) + params["head.b"]
    return reshape(out, (-1,))


def forward_loss(batch_x: np.ndarray, batch_y: np.ndarray, params: dict, config: ModelConfig):
    """Training loss for one batch: task + codebook + commitment terms."""
    x = Tensor(np.asarray(batch_x, dtype=np.float64))
    z_e = encoder_forward(x, params, config)
    indices = vq.nearest_indices(z_e.data, params["codebook"].data)
    z_q_rows = gather_rows(params["codebook"], indices)
    decoder_in = vq.straight_through(z_e, z_q_rows)
    pred = decoder_forward(decoder_in, params, config)
    total, parts = vq.vq_loss(pred, batch_y, z_e, z_q_rows, config.beta)
    return total, parts, indices


# ----- trained model -------------------------------------------------------------


@dataclass
class TrainedModel:
    params: dict
    config: ModelConfig
    feature_spec: FeatureSpec
    stats: NormalizationStats
    train_log: list = field(default_factory=list)  # per-epoch dicts

    # -- inference -------------------------------------------------------
    def encode(self, values: np.ndarray) -> np.ndarray:
        """(T, F) window to its (S, E) continuous latent block."""
        return self.encode_batch(np.asarray(values)[None])[0]

    def encode_batch(self, values: np.ndarray) -> np.ndarray:
        return encoder_forward(Tensor(values), self.params, self.config).data

    def latent_states(self, values: np.ndarray) -> np.ndarray:
        """Codebook indices (length S) assigned to one window."""
        return self.latent_states_batch(np.asarray(values)[None])[0]

    def latent_states_batch(self, values: np.ndarray) -> np.ndarray:
        return vq.nearest_indices(self.encode_batch(values), self.params["codebook"].data)

    def decode(self, z_q: np.ndarray) -> float:
        """RUL estimate from one (S, E) latent block, clamped to [0, rul_cap]."""
        raw = decoder_forward(Tensor(np.asarray(z_q)[None]), self.params, self.config).data[0]
        return float(np.clip(raw, 0.0, self.config.rul_cap))

    def predict_direct(self, values: np.ndarray) -> float:
        """Decoder RUL estimate for one window, clamped to [0, rul_cap]."""
        return float(self.predict_direct_batch(np.asarray(values)[None])[0])

    def predict_direct_batch(self, values: np.ndarray) -> np.ndarray:
        z_e = self.encode_batch(values)
        q = vq.quantize(z_e, self.params["codebook"].data)
        raw = decoder_forward(Tensor(q.z_q), self.params, self.config).data
        return np.clip(raw, 0.0, self.config.rul_cap)

    # -- persistence -------------------------------------------------------
    def config_digest(self) -> str:
        """Digest of everything artifacts must agree on to interoperate."""
        ident = {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "feature_spec": {
                "sensor_indices": list(self.feature_spec.sensor_indices),
                "include_settings": self.feature_spec.include_settings,
            },
            "stats": {
                "minimum": self.stats.minimum.tolist(),
                "maximum": self.stats.maximum.tolist(),
            },
        }
        return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()

    def save(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "model",
            "config": asdict(self.config),
            "feature_spec": {
                "sensor_indices": list(self.feature_spec.sensor_indices),
                "include_settings": self.feature_spec.include_settings,
            },
            "stats": {
                "minimum": self.stats.minimum.tolist(),
                "maximum": self.stats.maximum.tolist(),
            },
            "config_digest": self.config_digest(),
            "train_log": self.train_log,
            "params": {
                name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
                for name, t in self.params.items()
            },
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "TrainedModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "model":
            raise ValidationError(f"{path}: not a model file")
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValidationError(
                f"{path}: format version {doc.get('format_version')} != {FORMAT_VERSION}"
            )
        cfg_doc = dict(doc["config"])
        cfg_doc["ffn_hidden"] = cfg_doc.get("ffn_hidden")
        config = ModelConfig(**cfg_doc)
        spec = FeatureSpec(
            sensor_indices=tuple(doc["feature_spec"]["sensor_indices"]),
            include_settings=doc["feature_spec"]["include_settings"],
        )
        stats = NormalizationStats(
            minimum=doc["stats"]["minimum"], maximum=doc["stats"]["maximum"]
        )
        expected = init_params(config)
        params = {}
        for name, exp in expected.items():
            if name not in doc["params"]:
                raise ValidationError(f"{path}: missing parameter '{name}'")
            entry = doc["params"][name]
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if shape != exp.data.shape or values.size != exp.data.size:
                raise ValidationError(
                    f"{path}: parameter '{name}' has shape {shape}, expected {exp.data.shape}"
                )
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"{path}: parameter '{name}' has non-finite values")
            params[name] = Tensor(values.reshape(shape), requires_grad=True)
        extra = set(doc["params"]) - set(expected)
        if extra:
            raise ValidationError(f"{path}: unexpected parameters {sorted(extra)}")
        return cls(params=params, config=config, feature_spec=spec, stats=stats,
                   train_log=list(doc.get("train_log", [])))


def train(
    windows,
    config: ModelConfig,
    feature_spec: FeatureSpec,
    stats: NormalizationStats,
    progress=None,
) -> TrainedModel:
    """Mini-batch Adam training over the deck of windows.

    Batch order reshuffles every epoch from the shuffle stream of the seed;
    parameter initialization uses the parameter stream, so training is fully
    reproducible from (windows, config).
    """
    windows = list(windows)
    if not windows:
        raise ValidationError("no training windows")
    xs = np.stack([w.values for w in windows])
    ys = np.array([w.rul_target for w in windows], dtype=np.float64)
    if not np.all(np.isfinite(ys)):
        raise ValidationError("training windows must carry finite RUL targets")

    params = init_params(config, substream(config.seed, STREAM_PARAMS))
    optimizer = Adam(params, lr=config.learning_rate)
    shuffle_rng = substream(config.seed, STREAM_SHUFFLE)
    n = len(windows)
    log = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        part_sums = {"task": 0.0, "codebook": 0.0, "commitment": 0.0}
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, parts, _ = forward_loss(xs[batch], ys[batch], params, config)
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // config.batch_size + 1}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.data) * len(batch)
            for key in part_sums:
                part_sums[key] += parts[key] * len(batch)
        entry = {"epoch": epoch + 1, "loss": total / n}
        entry.update({key: part_sums[key] / n for key in part_sums})
        log.append(entry)
        if progress is not None:
            progress(entry)
    return TrainedModel(params=params, config=config, feature_spec=feature_spec,
                        stats=stats, train_log=log)


def make_config(dataset: Optional[str], n_features: int, overrides: dict) -> ModelConfig:
    """Config from the optional dataset preset plus explicit overrides."""
    base: dict = {}
    if dataset is not None:
        if dataset not in PRESETS:
            raise ValidationError(f"unknown dataset '{dataset}' (expected FD001..FD004)")
        preset = dict(PRESETS[dataset])
        preset.pop("ema_lambda")
        base.update(preset)
    base["n_features"] = n_features
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "window_length" not in base:
        raise ValidationError("window_length is required when no dataset preset is used")
    return ModelConfig(**base)
