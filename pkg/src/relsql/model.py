"""Encoder + decoder bundle with checkpoint save/load."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder import (DecoderConfig, RuleCache, complete_for_emission, declare_decoder, decode,
                      training_loss)
from .encoder import EncoderConfig, Vocab, declare_encoder, encode
from .numerics import Tensor
from .params import ParamStore, read_checkpoint, save_checkpoint
from .schema import Schema, tokenize
from .sqltree import SqlTree, emit_sql


@dataclass
class Model:
    vocab: Vocab
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    params: ParamStore
    cache: RuleCache = field(default_factory=RuleCache, repr=False)

    @classmethod
    def create(cls, vocab: Vocab, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int = 0) -> "Model":
        if enc_cfg.vocab_size != len(vocab):
            enc_cfg = EncoderConfig(**{**asdict(enc_cfg), "vocab_size": len(vocab)})
        if dec_cfg.d_x != enc_cfg.d_x:
            raise ValueError(f"decoder d_x={dec_cfg.d_x} differs from encoder d_x={enc_cfg.d_x}")
        store = ParamStore(seed)
        declare_encoder(store, enc_cfg)
        declare_decoder(store, dec_cfg)
        return cls(vocab, enc_cfg, dec_cfg, store)

    def loss(self, question: str, schema: Schema, gold: SqlTree, rng=None, training: bool = True) -> Tensor:
        q = tokenize(question)
        enc = encode(q, schema, self.params, self.enc_cfg, self.vocab, rng=rng, training=training)
        return training_loss(enc, q, schema, self.params, self.dec_cfg, gold, rng=rng,
                             training=training, cache=self.cache)

    def predict(self, question: str, schema: Schema, trace: list | None = None) -> SqlTree:
        q = tokenize(question)
        enc = encode(q, schema, self.params, self.enc_cfg, self.vocab)
        return decode(enc, q, schema, self.params, self.dec_cfg, trace=trace, cache=self.cache)

    def predict_sql(self, question: str, schema: Schema, trace: list | None = None) -> str:
        return emit_sql(complete_for_emission(self.predict(question, schema, trace)), schema)

    # ---- persistence
    def meta(self) -> dict:
        return {"vocab": self.vocab.itos, "encoder": asdict(self.enc_cfg),
                "decoder": {**asdict(self.dec_cfg), "default_numbers": list(self.dec_cfg.default_numbers)}}

    def save(self, path: str | Path, extra: dict[str, np.ndarray] | None = None,
             meta: dict | None = None) -> None:
        save_checkpoint(path, self.params, {**self.meta(), **(meta or {})}, extra)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", dict[str, np.ndarray], dict]:
        seed, state, extra, meta = read_checkpoint(path)
        vocab = Vocab(meta["vocab"][2:])
        if vocab.itos != meta["vocab"]:
            raise ValueError(f"{path}: vocabulary does not round-trip")
        model = cls.create(vocab, EncoderConfig(**meta["encoder"]), DecoderConfig(**meta["decoder"]), seed)
        model.params.load_state(state)
        return model, extra, meta
