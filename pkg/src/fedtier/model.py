"""Click-prediction model: embedding tables, bottom/top MLPs, dot interactions.

Architecture per sample: each sparse field is embedded (the multivalued
history field by mean pooling), the dense vector goes through a bottom MLP
(one ReLU hidden layer) producing a vector ``b`` of embedding size, all
pairwise dot products among {b, e_1, ..., e_F} are computed, and
``[b || dots]`` feeds a top MLP (one ReLU hidden layer) ending in a sigmoid.

Gradients are derived by hand (plain numpy, no autodiff); the loss is mean
binary cross-entropy computed in the numerically stable logit form.
Embedding gradients are materialized as full dense tables so rows untouched
by a batch are exactly zero -- downstream quantization depends on that.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .data import ITEM_FIELD, Dataset, FeatureSchema, Interaction, schema_from_dict, schema_to_dict

GradientTensors = dict[str, np.ndarray]

_MLP_KEYS = ("bot.w1", "bot.b1", "bot.w2", "bot.b2", "top.w1", "top.b1", "top.w2", "top.b2")


@dataclass(frozen=True)
class ModelConfig:
    schema: FeatureSchema
    embedding_dim: int = 16
    bottom_hidden: int = 16
    top_hidden: int = 256

    def __post_init__(self):
        if self.embedding_dim < 1 or self.bottom_hidden < 1 or self.top_hidden < 1:
            raise ValueError("embedding_dim and hidden sizes must be >= 1")

    @property
    def n_vectors(self) -> int:
        """Interacting vectors: bottom-MLP output plus one per sparse field."""
        return 1 + len(self.schema.sparse_fields)

    @property
    def interaction_dim(self) -> int:
        nv = self.n_vectors
        return self.embedding_dim + nv * (nv - 1) // 2


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


@dataclass(frozen=True)
class SubModelSpec:
    channel_fraction: float

    def __post_init__(self):
        if not 0.0 < self.channel_fraction <= 1.0:
            raise ValueError(f"channel_fraction must be in (0, 1], got {self.channel_fraction}")

    def sliced_width(self, top_hidden: int) -> int:
        width = round(self.channel_fraction * top_hidden)
        if width < 1:
            raise ValueError(
                f"channel_fraction {self.channel_fraction} yields width < 1 for "
                f"top_hidden {top_hidden}"
            )
        return width


def tensor_keys(config: ModelConfig) -> list[str]:
    keys = [f"emb.{f.name}" for f in config.schema.sparse_fields]
    keys.extend(_MLP_KEYS)
    return keys


def zeros_like_params(config: ModelConfig) -> GradientTensors:
    return {k: np.zeros_like(v) for k, v in init(config, 0).tensors.items()}


def init(config: ModelConfig, seed: int) -> ModelParams:
    """Embeddings uniform in +-1/sqrt(dim), MLP weights +-1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    m = config.embedding_dim
    schema = config.schema
    tensors: dict[str, np.ndarray] = {}
    bound = 1.0 / np.sqrt(m)
    for f in schema.sparse_fields:
        tensors[f"emb.{f.name}"] = rng.uniform(-bound, bound, size=(f.cardinality, m))

    def mlp(fan_in: int, fan_out: int) -> np.ndarray:
        b = 1.0 / np.sqrt(max(1, fan_in))
        return rng.uniform(-b, b, size=(fan_in, fan_out))

    tensors["bot.w1"] = mlp(schema.dense_dim, config.bottom_hidden)
    tensors["bot.b1"] = np.zeros(config.bottom_hidden)
    tensors["bot.w2"] = mlp(config.bottom_hidden, m)
    tensors["bot.b2"] = np.zeros(m)
    tensors["top.w1"] = mlp(config.interaction_dim, config.top_hidden)
    tensors["top.b1"] = np.zeros(config.top_hidden)
    tensors["top.w2"] = mlp(config.top_hidden, 1)
    tensors["top.b2"] = np.zeros(1)
    return ModelParams(config, tensors)


class _Batch:
    """Dense array view of a list of interactions."""

    def __init__(self, schema: FeatureSchema, interactions: list[Interaction]):
        if not interactions:
            raise ValueError("batch must be non-empty")
        n = len(interactions)
        self.n = n
        self.item_idx = np.array([it.item_id for it in interactions], dtype=np.int64)
        singles = schema.single_fields
        self.single_idx = np.array(
            [[it.sparse_values[j] for j in range(len(singles))] for it in interactions],
            dtype=np.int64,
        ).reshape(n, len(singles))
        self.dense = np.array(
            [it.dense_values for it in interactions], dtype=np.float64
        ).reshape(n, schema.dense_dim)
        if not np.all(np.isfinite(self.dense)):
            raise ValueError("non-finite dense input")
        self.labels = np.array([it.label for it in interactions], dtype=np.float64)

        self.has_history = schema.history_field is not None
        if self.has_history:
            lmax = max((len(it.history) for it in interactions), default=0)
            self.hist_idx = np.zeros((n, lmax), dtype=np.int64)
            self.hist_w = np.zeros((n, lmax), dtype=np.float64)
            for i, it in enumerate(interactions):
                if it.history:
                    self.hist_idx[i, : len(it.history)] = it.history
                    self.hist_w[i, : len(it.history)] = 1.0 / len(it.history)


def _stable_sigmoid(logit: np.ndarray) -> np.ndarray:
    out = np.empty_like(logit)
    pos = logit >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logit[pos]))
    ex = np.exp(logit[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_cache(params: ModelParams, batch: _Batch):
    cfg = params.config
    t = params.tensors
    schema = cfg.schema

    # interacting vectors: [bottom output, one per sparse field in order]
    pre_b = batch.dense @ t["bot.w1"] + t["bot.b1"]
    act_b = np.maximum(pre_b, 0.0)
    b_out = act_b @ t["bot.w2"] + t["bot.b2"]

    vectors = [b_out]
    single_pos = 0
    for f in schema.sparse_fields:
        table = t[f"emb.{f.name}"]
        if f.multivalued:
            if batch.hist_idx.shape[1] == 0:
                vectors.append(np.zeros((batch.n, cfg.embedding_dim)))
            else:
                gathered = table[batch.hist_idx]  # (n, L, m)
                vectors.append(np.einsum("nlm,nl->nm", gathered, batch.hist_w))
        elif f.name == ITEM_FIELD:
            vectors.append(table[batch.item_idx])
        else:
            vectors.append(table[batch.single_idx[:, single_pos]])
            single_pos += 1

    pairs = [(i, j) for i in range(len(vectors)) for j in range(i + 1, len(vectors))]
    dots = np.stack(
        [np.sum(vectors[i] * vectors[j], axis=1) for (i, j) in pairs], axis=1
    ) if pairs else np.zeros((batch.n, 0))

    z = np.concatenate([b_out, dots], axis=1)
    pre_t = z @ t["top.w1"] + t["top.b1"]
    act_t = np.maximum(pre_t, 0.0)
    logit = (act_t @ t["top.w2"] + t["top.b2"]).reshape(-1)
    return {
        "pre_b": pre_b,
        "act_b": act_b,
        "vectors": vectors,
        "pairs": pairs,
        "dots": dots,
        "z": z,
        "pre_t": pre_t,
        "act_t": act_t,
        "logit": logit,
    }


def forward(params: ModelParams, batch: list[Interaction]) -> np.ndarray:
    """Predicted click probabilities in (0, 1), one per interaction."""
    b = _Batch(params.config.schema, batch)
    cache = _forward_cache(params, b)
    return _stable_sigmoid(cache["logit"])


def bce_loss(logit: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy from logits (log-sum-exp form)."""
    per = np.maximum(logit, 0.0) - logit * labels + np.log1p(np.exp(-np.abs(logit)))
    return float(per.mean())


def loss_and_grad(params: ModelParams, batch: list[Interaction]) -> tuple[float, GradientTensors]:
    """Mean BCE and its gradient w.r.t. every parameter tensor.

    Embedding gradients are full dense tables; rows not referenced by the
    batch stay exactly zero.
    """
    cfg = params.config
    t = params.tensors
    schema = cfg.schema
    b = _Batch(schema, batch)
    cache = _forward_cache(params, b)
    logit = cache["logit"]
    if not np.all(np.isfinite(logit)):
        raise ValueError("non-finite logit in forward pass")
    loss = bce_loss(logit, b.labels)

    n = b.n
    p = _stable_sigmoid(logit)
    dlogit = ((p - b.labels) / n).reshape(n, 1)

    grads: GradientTensors = {}
    act_t = cache["act_t"]
    grads["top.b2"] = dlogit.sum(axis=0)
    grads["top.w2"] = act_t.T @ dlogit
    dact_t = dlogit @ t["top.w2"].T
    dpre_t = dact_t * (cache["pre_t"] > 0)
    grads["top.w1"] = cache["z"].T @ dpre_t
    grads["top.b1"] = dpre_t.sum(axis=0)
    dz = dpre_t @ t["top.w1"].T

    m = cfg.embedding_dim
    vectors = cache["vectors"]
    dvecs = [np.zeros_like(v) for v in vectors]
    dvecs[0] += dz[:, :m]
    ddots = dz[:, m:]
    for q, (i, j) in enumerate(cache["pairs"]):
        dq = ddots[:, q : q + 1]
        dvecs[i] += dq * vectors[j]
        dvecs[j] += dq * vectors[i]

    db_out = dvecs[0]
    act_b = cache["act_b"]
    grads["bot.b2"] = db_out.sum(axis=0)
    grads["bot.w2"] = act_b.T @ db_out
    dact_b = db_out @ t["bot.w2"].T
    dpre_b = dact_b * (cache["pre_b"] > 0)
    grads["bot.w1"] = b.dense.T @ dpre_b
    grads["bot.b1"] = dpre_b.sum(axis=0)

    single_pos = 0
    for k, f in enumerate(schema.sparse_fields, start=1):
        g = np.zeros_like(t[f"emb.{f.name}"])
        dv = dvecs[k]
        if f.multivalued:
            if b.hist_idx.shape[1] > 0:
                contrib = dv[:, None, :] * b.hist_w[:, :, None]  # (n, L, m)
                np.add.at(g, b.hist_idx.reshape(-1), contrib.reshape(-1, m))
        elif f.name == ITEM_FIELD:
            np.add.at(g, b.item_idx, dv)
        else:
            np.add.at(g, b.single_idx[:, single_pos], dv)
            single_pos += 1
        grads[f"emb.{f.name}"] = g

    return loss, {k: grads[k] for k in tensor_keys(cfg)}


def extract_submodel(params: ModelParams, spec: SubModelSpec) -> ModelParams:
    """Slice the top-MLP hidden layer to the leading channel_fraction width."""
    cfg = params.config
    width = spec.sliced_width(cfg.top_hidden)
    if width == cfg.top_hidden:
        return params.copy()
    t = params.tensors
    sliced = {k: v.copy() for k, v in t.items()}
    sliced["top.w1"] = t["top.w1"][:, :width].copy()
    sliced["top.b1"] = t["top.b1"][:width].copy()
    sliced["top.w2"] = t["top.w2"][:width, :].copy()
    return ModelParams(replace(cfg, top_hidden=width), sliced)


def embed_subgradient(
    grad: GradientTensors, spec: SubModelSpec, full_config: ModelConfig
) -> tuple[GradientTensors, GradientTensors]:
    """Place a sliced gradient back into full-model shape.

    Returns (full_gradient, coverage_mask): uncovered coordinates of the
    gradient are exactly zero and the binary mask marks which coordinates
    the sub-model actually trained.
    """
    width = spec.sliced_width(full_config.top_hidden)
    expected = {
        "top.w1": (full_config.interaction_dim, width),
        "top.b1": (width,),
        "top.w2": (width, 1),
    }
    for key, shape in expected.items():
        if grad[key].shape != shape:
            raise ValueError(f"{key}: expected shape {shape}, got {grad[key].shape}")

    full: GradientTensors = {}
    mask: GradientTensors = {}
    for key in tensor_keys(full_config):
        if key == "top.w1":
            g = np.zeros((full_config.interaction_dim, full_config.top_hidden))
            g[:, :width] = grad[key]
            m = np.zeros_like(g)
            m[:, :width] = 1.0
        elif key == "top.b1":
            g = np.zeros(full_config.top_hidden)
            g[:width] = grad[key]
            m = np.zeros_like(g)
            m[:width] = 1.0
        elif key == "top.w2":
            g = np.zeros((full_config.top_hidden, 1))
            g[:width, :] = grad[key]
            m = np.zeros_like(g)
            m[:width, :] = 1.0
        else:
            g = grad[key].copy()
            m = np.ones_like(g)
        full[key] = g
        mask[key] = m
    return full, mask


def save_params(params: ModelParams, path: str | os.PathLike) -> None:
    """Checkpoint as an npz of named tensors plus a JSON config header."""
    meta = {
        "schema": schema_to_dict(params.config.schema),
        "embedding_dim": params.config.embedding_dim,
        "bottom_hidden": params.config.bottom_hidden,
        "top_hidden": params.config.top_hidden,
    }
    arrays = {f"tensor/{k}": v for k, v in params.tensors.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_params(path: str | os.PathLike) -> ModelParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        config = ModelConfig(
            schema=schema_from_dict(meta["schema"]),
            embedding_dim=meta["embedding_dim"],
            bottom_hidden=meta["bottom_hidden"],
            top_hidden=meta["top_hidden"],
        )
        tensors = {
            k[len("tensor/"):]: data[k] for k in data.files if k.startswith("tensor/")
        }
    return ModelParams(config, {k: tensors[k] for k in tensor_keys(config)})


def default_config(dataset: Dataset, **overrides) -> ModelConfig:
    return ModelConfig(schema=dataset.schema, **overrides)
