"""scikit-learn style wrapper around the tiny decoder-only transformer."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .datagen.vocab import VocabSpec
from .model import ModelConfig, ParamSet, forward, init_params, load, to_torch
from .sources import ArraySource, Source
from .training import TrainConfig, train
from .transfer import TransferSelector, apply_selector
from .validation import check_mask, check_tokens


class TransformerLM(BaseEstimator):
    """Next-token language model trained with masked cross-entropy.

    ``fit`` accepts either a token matrix (with an optional loss mask) or a
    :class:`~procseed.sources.Source`. ``init_from`` is a checkpoint path or
    ParamSet whose components selected by ``transfer`` seed the model.
    """

    def __init__(self, n_layers=2, n_heads=4, d_model=16, vocab_size=None, max_seq_len=128,
                 lr=1e-3, weight_decay=1e-3, batch_size=256, max_steps=2000, warmup_steps=0,
                 schedule="constant", grad_clip=None, init_from=None, transfer="full",
                 embedding_init="keep", random_state=0):
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.vocab_size = vocab_size
        self.max_seq_len = max_seq_len
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.warmup_steps = warmup_steps
        self.schedule = schedule
        self.grad_clip = grad_clip
        self.init_from = init_from
        self.transfer = transfer
        self.embedding_init = embedding_init
        self.random_state = random_state

    def _source(self, X, loss_mask):
        if isinstance(X, Source):
            if X.binary:
                raise ValueError("TransformerLM works on token sources only")
            return X, X.vocab.size
        tokens = check_tokens(X, self.vocab_size)
        mask = check_mask(loss_mask, tokens)
        if not mask[:, 1:].any():
            raise ValueError("loss mask selects no target positions")
        v = self.vocab_size or int(tokens.max()) + 1
        return ArraySource(tokens, mask, VocabSpec(v, v), seed=self.random_state), v

    def _initial_params(self, cfg: ModelConfig) -> ParamSet:
        if self.init_from is None:
            return init_params(cfg, self.random_state)
        src = load(self.init_from) if not isinstance(self.init_from, ParamSet) else self.init_from
        sel = TransferSelector(self.transfer, embedding_init=self.embedding_init)
        return apply_selector(src, cfg, sel, self.random_state)

    def fit(self, X, y=None, loss_mask=None):
        source, vocab = self._source(X, loss_mask)
        cfg = ModelConfig(self.n_layers, self.n_heads, self.d_model, vocab, self.max_seq_len)
        tcfg = TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           max_steps=self.max_steps, warmup_steps=self.warmup_steps,
                           schedule=self.schedule, grad_clip=self.grad_clip,
                           val_size=min(1000, self.batch_size), seed=self.random_state)
        result = train(self._initial_params(cfg), source, tcfg)
        self.params_ = result.params
        self.metrics_ = result.metrics
        self.n_vocab_ = vocab
        return self

    def _logits(self, X):
        check_is_fitted(self, "params_")
        tokens = check_tokens(X, self.n_vocab_)
        W = to_torch(self.params_)
        with torch.no_grad():
            return forward(W, self.params_.config, torch.as_tensor(tokens))[0].numpy(), tokens

    def predict(self, X) -> np.ndarray:
        """Greedy next-token predictions, shape ``[n, length - 1]``."""
        return self._logits(X)[0].argmax(-1)[:, :-1]

    def predict_proba(self, X) -> np.ndarray:
        logits = self._logits(X)[0][:, :-1]
        z = np.exp(logits - logits.max(-1, keepdims=True))
        return z / z.sum(-1, keepdims=True)

    def score(self, X, y=None, loss_mask=None) -> float:
        """Token accuracy over masked target positions."""
        pred = self.predict(X)
        tokens = check_tokens(X, self.n_vocab_)
        m = check_mask(loss_mask, tokens)[:, 1:]
        if not m.any():
            raise ValueError("loss mask selects no target positions")
        return float((pred == tokens[:, 1:])[m].mean())
