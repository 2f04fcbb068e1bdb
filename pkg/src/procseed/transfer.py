"""Checkpoint surgery on tagged parameter sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model.params import ModelConfig, ParamSet, component_of, fresh_tensor, init_params, layer_of
from .model.transformer import mean_embedding

MODES = ("full", "attention_only", "mlp_only", "heads")
EMBEDDING_INITS = ("random", "mean_vector", "keep")
_MODE_TAGS = {"attention_only": {"attention"}, "mlp_only": {"mlp"}, "heads": set(),
              "full": {"embedding", "positional", "attention", "mlp", "norm", "head"}}


class TransferError(ValueError):
    pass


@dataclass
class TransferSelector:
    mode: str = "full"
    heads: list[tuple[int, int]] = field(default_factory=list)
    embedding_init: str = "keep"

    def __post_init__(self):
        if self.mode not in MODES:
            raise TransferError(f"unknown mode {self.mode!r}")
        if self.embedding_init not in EMBEDDING_INITS:
            raise TransferError(f"unknown embedding init {self.embedding_init!r}")
        self.heads = [tuple(h) for h in self.heads]
        if bool(self.heads) != (self.mode == "heads"):
            raise TransferError("a head list is required for, and only for, mode='heads'")


@dataclass
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _rng(rng):
    return np.random.default_rng(rng) if rng is None or isinstance(rng, (int, np.integer)) else rng


def _source_id(p: ParamSet) -> str:
    return p.provenance.get("name") or p.fingerprint()[:16]


def _input_table_name(cfg: ModelConfig) -> str:
    return "wte" if cfg.io_variant == "token" else "in_proj.weight"


def _fill_embedding(out: ParamSet, source: ParamSet, how: str, origin: dict):
    name = _input_table_name(out.config)
    if how == "keep":
        if name not in source.tensors or source[name].shape != out[name].shape:
            raise TransferError("embedding_init='keep' needs matching embedding tables")
        out.tensors[name] = source[name].copy()
        origin[name] = _source_id(source)
    elif how == "mean_vector":
        out.tensors[name] = np.broadcast_to(mean_embedding(source), out[name].shape).astype(out[name].dtype)
        origin[name] = f"mean:{_source_id(source)}"


def _copy(out: ParamSet, source: ParamSet, name: str, origin: dict):
    if name not in source.tensors or source[name].shape != out[name].shape:
        got = source.tensors.get(name)
        raise TransferError(f"shape mismatch for {name}: source "
                            f"{None if got is None else got.shape} vs target {out[name].shape}")
    out.tensors[name] = source[name].copy()
    origin[name] = _source_id(source)


def _copy_heads(out: ParamSet, source: ParamSet, heads, origin: dict):
    cfg = out.config
    d, dh = cfg.d_model, cfg.head_dim
    if source.config.d_model != d or source.config.n_heads != cfg.n_heads:
        raise TransferError("per-head transfer needs identical d_model and head count")
    for l, h in heads:
        if not (0 <= l < min(cfg.n_layers, source.config.n_layers) and 0 <= h < cfg.n_heads):
            raise TransferError(f"head ({l}, {h}) out of range")
        p = f"h.{l}.attn."
        sl = slice(h * dh, (h + 1) * dh)
        for part in range(3):  # q, k, v column blocks
            cols = slice(part * d + sl.start, part * d + sl.stop)
            out.tensors[p + "c_attn.weight"][:, cols] = source[p + "c_attn.weight"][:, cols]
            out.tensors[p + "c_attn.bias"][cols] = source[p + "c_attn.bias"][cols]
        out.tensors[p + "c_proj.weight"][sl, :] = source[p + "c_proj.weight"][sl, :]
        origin.setdefault(p + "heads", []).append([h, _source_id(source)])


def apply_selector(source: ParamSet, target_cfg: ModelConfig, sel: TransferSelector, rng=None) -> ParamSet:
    """New parameters for ``target_cfg`` taking the selected components from ``source``.

    Everything not selected is freshly initialized. Under ``full`` the
    embedding, positional and head tensors are copied only when their shapes
    match (vocabularies may differ); ``embedding_init`` then decides the input
    table. Per-head mode copies the q/k/v columns and output-projection rows
    of each chosen head; shared biases of the output projection stay fresh.
    """
    rng = _rng(rng)
    out = init_params(target_cfg, rng)
    origin: dict = {}
    in_name = _input_table_name(target_cfg)
    for name in out:
        tag = component_of(name)
        if tag not in _MODE_TAGS[sel.mode] or name == in_name:
            continue
        if sel.mode == "full" and tag in ("embedding", "head", "positional"):
            if name in source.tensors and source[name].shape == out[name].shape:
                _copy(out, source, name, origin)
            continue
        _copy(out, source, name, origin)
    if sel.mode == "heads":
        _copy_heads(out, source, sel.heads, origin)
    _fill_embedding(out, source, sel.embedding_init, origin)
    out.provenance = {"transfer": {"mode": sel.mode, "heads": [list(h) for h in sel.heads],
                                   "embedding_init": sel.embedding_init,
                                   "source": _source_id(source)},
                      "origin": origin, "parents": [source.provenance]}
    return out


def assemble(parts, base_cfg: ModelConfig, rng=None, embedding_init: str = "random") -> ParamSet:
    """Build a model taking each listed component tag from its own source.

    ``parts`` is a list of ``(ParamSet, tags)``. Tensors not covered by any
    part are freshly initialized. Provenance records the source and content
    hash of every tensor.
    """
    rng = _rng(rng)
    claimed: dict[str, int] = {}
    for i, (_, tags) in enumerate(parts):
        for t in tags:
            if t in claimed:
                raise TransferError(f"component {t!r} claimed by parts {claimed[t]} and {i}")
            claimed[t] = i
    out = init_params(base_cfg, rng)
    origin, hashes = {}, {}
    for name in out:
        i = claimed.get(component_of(name))
        if i is not None:
            _copy(out, parts[i][0], name, origin)
    if embedding_init != "random" and "embedding" not in claimed:
        _fill_embedding(out, parts[0][0], embedding_init, origin)
    for name in out:
        origin.setdefault(name, "fresh")
        hashes[name] = out.tensor_hash(name)
    out.provenance = {"assembled": [{"source": _source_id(p), "tags": sorted(t)} for p, t in parts],
                      "origin": origin, "hashes": hashes}
    return out


def shuffle_weights(p: ParamSet, rng=None) -> ParamSet:
    """Permute the entries of every tensor independently."""
    rng = _rng(rng)
    out = p.copy()
    for name, v in out.items():
        out.tensors[name] = rng.permutation(v.ravel()).reshape(v.shape)
    out.provenance = {**p.provenance, "perturbation": "shuffled"}
    return out


def add_noise(p: ParamSet, spec: NoiseSpec) -> ParamSet:
    """Add N(0, sigma^2) to every entry; absolute scale."""
    rng = np.random.default_rng(spec.seed)
    out = p.copy()
    for name, v in out.items():
        out.tensors[name] = (v + rng.standard_normal(v.shape) * spec.sigma).astype(v.dtype)
    out.provenance = {**p.provenance, "perturbation": f"noise:{spec.sigma}:{spec.seed}"}
    return out


def resize_vocab(p: ParamSet, new_vocab: int, rng=None, fill: str = "random") -> ParamSet:
    """Rebuild the embedding and output head at ``new_vocab`` rows/columns.

    ``fill="keep"`` with an unchanged size is the identity; ``"mean"`` sets
    every embedding row to the mean of the old table. All other tensors are
    untouched.
    """
    if p.config.io_variant != "token":
        raise TransferError("resize_vocab applies to token models")
    if fill == "keep" and new_vocab == p.config.vocab_size:
        return p.copy()
    rng = _rng(rng)
    cfg = p.config.replace(vocab_size=new_vocab)
    tensors = dict(p.copy().tensors)
    d = cfg.d_model
    if fill == "mean":
        tensors["wte"] = np.broadcast_to(mean_embedding(p), (new_vocab, d)).astype(p["wte"].dtype)
    else:
        tensors["wte"] = fresh_tensor("wte", (new_vocab, d), rng, p["wte"].dtype)
    tensors["head.weight"] = fresh_tensor("head.weight", (d, new_vocab), rng, p["head.weight"].dtype)
    return ParamSet(cfg, tensors, {**p.provenance, "resized_vocab": new_vocab})
