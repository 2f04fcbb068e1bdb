from .params import (
    COMPONENTS, PRESETS, ModelConfig, ParamSet, component_of, fresh_tensor, init_params, layer_of,
    n_params, param_shapes,
)
from .transformer import (
    EmptyMaskError, InputError, backward, binary_loss, forward, forward_binary, from_torch, lm_loss,
    masked_loss, mean_embedding, to_torch,
)
from .entropy import NotStochasticError, attention_entropy, head_entropies
from .checkpoint import CheckpointError, dumps, load, loads, save
