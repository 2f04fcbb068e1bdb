"""Pre-norm GPT-2 style decoder, written functionally over a parameter dict.

Parameters live in a ``ParamSet`` (numpy) for surgery and on disk; the
functions here take the torch view returned by :func:`to_torch`.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .params import ModelConfig, ParamSet


class EmptyMaskError(ValueError):
    """Raised when a loss would be taken over zero positions."""


class InputError(ValueError):
    pass


def to_torch(p: ParamSet, requires_grad: bool = False, dtype=None) -> dict[str, torch.Tensor]:
    out = {}
    for k, v in p.items():
        t = torch.from_numpy(np.array(v, copy=True))
        if dtype is not None:
            t = t.to(dtype)
        out[k] = t.requires_grad_(requires_grad)
    return out


def from_torch(tensors: dict[str, torch.Tensor], cfg: ModelConfig, provenance=None) -> ParamSet:
    return ParamSet(cfg, {k: v.detach().cpu().numpy().copy() for k, v in tensors.items()},
                    dict(provenance or {}))


def _check_tokens(cfg: ModelConfig, tokens: torch.Tensor):
    if tokens.dim() != 2:
        raise InputError("tokens must be [batch, seq]")
    if tokens.shape[1] > cfg.max_seq_len:
        raise InputError(f"sequence length {tokens.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    if tokens.numel() and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise InputError("token id out of range")


def _blocks(W, cfg: ModelConfig, x: torch.Tensor, want_attn: bool):
    B, T, d = x.shape
    H, dh = cfg.n_heads, cfg.head_dim
    maps = []
    if want_attn:
        causal = torch.ones(T, T, dtype=torch.bool).tril()
    for l in range(cfg.n_layers):
        p = f"h.{l}."
        h = F.layer_norm(x, (d,), W[p + "ln_1.weight"], W[p + "ln_1.bias"], eps=1e-5)
        qkv = h @ W[p + "attn.c_attn.weight"] + W[p + "attn.c_attn.bias"]
        q, k, v = (t.view(B, T, H, dh).transpose(1, 2) for t in qkv.split(d, dim=-1))
        if want_attn:
            scores = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
            att = scores.masked_fill(~causal, float("-inf")).softmax(-1)
            maps.append(att)
            y = att @ v
        else:
            y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        y = y.transpose(1, 2).reshape(B, T, d)
        x = x + y @ W[p + "attn.c_proj.weight"] + W[p + "attn.c_proj.bias"]
        h = F.layer_norm(x, (d,), W[p + "ln_2.weight"], W[p + "ln_2.bias"], eps=1e-5)
        h = F.gelu(h @ W[p + "mlp.c_fc.weight"] + W[p + "mlp.c_fc.bias"])
        x = x + h @ W[p + "mlp.c_proj.weight"] + W[p + "mlp.c_proj.bias"]
    x = F.layer_norm(x, (d,), W["ln_f.weight"], W["ln_f.bias"], eps=1e-5)
    return x, maps


def forward(W: dict[str, torch.Tensor], cfg: ModelConfig, tokens, want_attn: bool = False):
    """Logits ``[batch, seq, vocab]`` and, if asked, per-layer ``[batch, head, q, k]`` maps."""
    if cfg.io_variant != "token":
        raise InputError("forward expects the token io variant; use forward_binary")
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    _check_tokens(cfg, tokens)
    T = tokens.shape[1]
    x = W["wte"][tokens] + W["wpe"][:T]
    x, maps = _blocks(W, cfg, x, want_attn)
    logits = x @ W["head.weight"]
    return (logits, maps) if want_attn else (logits, None)


def forward_binary(W: dict[str, torch.Tensor], cfg: ModelConfig, states, want_attn: bool = False):
    """Per-cell next-state scores ``[batch, steps, width]`` from binary states."""
    if cfg.io_variant != "binary":
        raise InputError("forward_binary expects the binary io variant")
    states = torch.as_tensor(states)
    if states.dim() != 3 or states.shape[-1] != cfg.vocab_size:
        raise InputError(f"states must be [batch, steps, {cfg.vocab_size}]")
    if states.shape[1] > cfg.max_seq_len:
        raise InputError("too many time steps for max_seq_len")
    if ((states != 0) & (states != 1)).any():
        raise InputError("states must be binary")
    dtype = W["in_proj.weight"].dtype
    x = states.to(dtype) @ W["in_proj.weight"] + W["in_proj.bias"] + W["wpe"][: states.shape[1]]
    x, maps = _blocks(W, cfg, x, want_attn)
    scores = x @ W["out_proj.weight"] + W["out_proj.bias"]
    return (scores, maps) if want_attn else (scores, None)


def masked_loss(logits: torch.Tensor, targets, loss_mask):
    """Mean cross-entropy over masked positions; returns ``(loss, count)``."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    mask = torch.as_tensor(loss_mask, dtype=torch.bool)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise InputError("logits, targets and mask shapes do not align")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("loss mask selects no positions")
    return F.cross_entropy(logits[mask], targets[mask]), count


def lm_loss(W, cfg: ModelConfig, tokens, loss_mask, want_attn: bool = False):
    """Next-token loss; ``loss_mask[:, t]`` flags whether token ``t`` is a target."""
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    mask = torch.as_tensor(loss_mask, dtype=torch.bool)
    logits, maps = forward(W, cfg, tokens[:, :-1], want_attn)
    loss, count = masked_loss(logits, tokens[:, 1:], mask[:, 1:])
    return loss, count, logits, maps


def binary_loss(W, cfg: ModelConfig, rows, want_attn: bool = False):
    """Per-cell sigmoid cross-entropy of predicting ``rows[:, 1:]`` from ``rows[:, :-1]``."""
    rows = torch.as_tensor(rows)
    scores, maps = forward_binary(W, cfg, rows[:, :-1], want_attn)
    target = rows[:, 1:].to(scores.dtype)
    return F.binary_cross_entropy_with_logits(scores, target), target.numel(), scores, maps


def backward(p: ParamSet, tokens, loss_mask=None, dtype=None):
    """Loss and exact gradient of the batch objective w.r.t. every tensor of ``p``.

    Token models use the masked next-token loss; binary models the per-cell
    loss on ``tokens`` interpreted as ``[batch, steps, width]`` state rows.
    """
    W = to_torch(p, requires_grad=True, dtype=dtype)
    if p.config.io_variant == "token":
        loss = lm_loss(W, p.config, tokens, loss_mask)[0]
    else:
        loss = binary_loss(W, p.config, tokens)[0]
    loss.backward()
    grads = ParamSet(p.config, {k: W[k].grad.detach().numpy().copy() for k in W},
                     {"gradient_of": p.provenance.get("name")})
    return float(loss.detach()), grads


def mean_embedding(p: ParamSet) -> np.ndarray:
    """Average input representation: embedding rows, or input-projection rows for binary models."""
    table = p["wte"] if p.config.io_variant == "token" else p["in_proj.weight"]
    return table.mean(axis=0)
