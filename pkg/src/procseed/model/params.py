"""Model configuration and tagged parameter sets."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, asdict, field

import numpy as np

COMPONENTS = ("embedding", "positional", "attention", "mlp", "norm", "head")
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Decoder-only transformer shape.

    For ``io_variant="binary"`` the ``vocab_size`` is the cell width of the
    binary state vectors.
    """

    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 16
    vocab_size: int = 102
    max_seq_len: int = 128
    io_variant: str = "token"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.io_variant not in ("token", "binary"):
            raise ValueError(f"unknown io_variant {self.io_variant!r}")
        if min(self.n_layers, self.n_heads, self.vocab_size, self.max_seq_len) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def replace(self, **kw) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "tiny": ModelConfig(2, 4, 16),
    "large": ModelConfig(4, 8, 512),
}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; the order fixes the init draw order."""
    d, V = cfg.d_model, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.io_variant == "token":
        shapes["wte"] = (V, d)
    else:
        shapes["in_proj.weight"] = (V, d)
        shapes["in_proj.bias"] = (d,)
    shapes["wpe"] = (cfg.max_seq_len, d)
    for l in range(cfg.n_layers):
        p = f"h.{l}."
        shapes[p + "ln_1.weight"] = (d,)
        shapes[p + "ln_1.bias"] = (d,)
        shapes[p + "attn.c_attn.weight"] = (d, 3 * d)
        shapes[p + "attn.c_attn.bias"] = (3 * d,)
        shapes[p + "attn.c_proj.weight"] = (d, d)
        shapes[p + "attn.c_proj.bias"] = (d,)
        shapes[p + "ln_2.weight"] = (d,)
        shapes[p + "ln_2.bias"] = (d,)
        shapes[p + "mlp.c_fc.weight"] = (d, 4 * d)
        shapes[p + "mlp.c_fc.bias"] = (4 * d,)
        shapes[p + "mlp.c_proj.weight"] = (4 * d, d)
        shapes[p + "mlp.c_proj.bias"] = (d,)
    shapes["ln_f.weight"] = (d,)
    shapes["ln_f.bias"] = (d,)
    if cfg.io_variant == "token":
        shapes["head.weight"] = (d, V)
    else:
        shapes["out_proj.weight"] = (d, V)
        shapes["out_proj.bias"] = (V,)
    return shapes


def n_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


_LAYER = re.compile(r"^h\.(\d+)\.")


def component_of(name: str) -> str:
    if name in ("wte",) or name.startswith("in_proj."):
        return "embedding"
    if name == "wpe":
        return "positional"
    if name.startswith(("head.", "out_proj.")):
        return "head"
    if ".attn." in name:
        return "attention"
    if ".mlp." in name:
        return "mlp"
    if ".ln_" in name or name.startswith("ln_f."):
        return "norm"
    raise KeyError(f"untagged parameter {name!r}")


def layer_of(name: str) -> int | None:
    m = _LAYER.match(name)
    return int(m.group(1)) if m else None


def _init_tensor(name: str, shape, rng, dtype) -> np.ndarray:
    if component_of(name) == "norm":
        return np.ones(shape, dtype) if name.endswith(".weight") else np.zeros(shape, dtype)
    if name.endswith(".bias"):
        return np.zeros(shape, dtype)
    return (rng.standard_normal(shape) * INIT_STD).astype(dtype)


@dataclass
class ParamSet:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            if missing:
                raise ValueError(f"parameter names do not match config: {sorted(missing)}")
            self.tensors = {k: self.tensors[k] for k in expected}
        for k, shape in expected.items():
            if self.tensors[k].shape != shape:
                raise ValueError(f"{k}: shape {self.tensors[k].shape} != {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def tag(self, name: str) -> str:
        return component_of(name)

    def layer(self, name: str) -> int | None:
        return layer_of(name)

    def names(self, *tags: str) -> list[str]:
        return [k for k in self.tensors if component_of(k) in tags]

    def copy(self) -> "ParamSet":
        import copy
        return ParamSet(self.config, {k: v.copy() for k, v in self.tensors.items()},
                        copy.deepcopy(self.provenance))

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()},
                        dict(self.provenance))

    def tensor_hash(self, name: str) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.tensors[name]).tobytes()).hexdigest()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in self.tensors.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def equal(self, other: "ParamSet") -> bool:
        return (self.config == other.config and list(self.tensors) == list(other.tensors)
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()))


def init_params(cfg: ModelConfig, rng, dtype=np.float32) -> ParamSet:
    """Weights ~ N(0, 0.02^2), biases zero, norm gains one."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    tensors = {k: _init_tensor(k, s, rng, dtype) for k, s in param_shapes(cfg).items()}
    return ParamSet(cfg, tensors, {"init": "random"})


def fresh_tensor(name: str, shape, rng, dtype=np.float32) -> np.ndarray:
    return _init_tensor(name, shape, rng, dtype)
