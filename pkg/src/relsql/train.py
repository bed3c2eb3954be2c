"""Training loop: two learning-rate groups, gradient accumulation, JSONL metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .data import Example
from .decoder import DecoderConfig, NoParse, gold_leaves_reachable
from .encoder import EncoderConfig, Vocab
from .evaluation import exact_set_match
from .model import Model
from .numerics import NumericError
from .schema import Schema, tokenize

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # optimisation; defaults follow the published regime
    epochs: int = 520
    batch_size: int = 12
    grad_accum: int = 5
    lr_encoder: float = 3e-6
    lr_decoder: float = 1.86e-4
    max_steps: int | None = None
    clip_norm: float = 5.0
    seed: int = 0
    heldout_fraction: float = 0.1
    train_eval_limit: int | None = None  # examples used for per-epoch training EM; None = all
    stop_at_train_em: float | None = None
    checkpoint_every: int = 1  # epochs between last.ckpt writes; the final epoch always writes
    # beam
    K: int = 30
    T: int = 9
    # encoder
    d_x: int = 64
    heads: int = 8
    n_layers: int = 4
    d_ff: int = 256
    dropout: float = 0.2
    # decoder
    d_b: int = 256
    ctx_heads: int = 8
    ff_hidden: int = 256
    composer_layers: int = 1
    composer_heads: int = 8
    composer_ff: int = 256

    def __post_init__(self):
        for k in ("epochs", "batch_size", "grad_accum", "K", "d_x", "heads", "d_b", "checkpoint_every"):
            if getattr(self, k) <= 0:
                raise ValueError(f"train config {k} must be positive")
        if self.lr_encoder < 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be non-negative (decoder positive)")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must lie in [0, 1)")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(self.d_x, self.heads, self.n_layers, self.d_ff, self.dropout, vocab_size)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(K=self.K, T=self.T, d_b=self.d_b, d_x=self.d_x, ctx_heads=self.ctx_heads,
                             ff_hidden=self.ff_hidden, composer_layers=self.composer_layers,
                             composer_heads=self.composer_heads, composer_ff=self.composer_ff,
                             dropout=self.dropout)


def load_config(path: str | Path | None = None, profile: str | None = None,
                overrides: dict | None = None) -> TrainConfig:
    """Read a YAML config: top-level keys are TrainConfig fields, ``profiles`` maps names to overrides."""
    doc = yaml.safe_load(Path(path).read_text()) if path else {}
    doc = doc or {}
    profiles = doc.pop("profiles", {}) or {}
    if profile is not None:
        if profile not in profiles:
            raise KeyError(f"unknown profile {profile!r}; have {sorted(profiles)}")
        doc.update(profiles[profile])
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(doc) - known
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**doc)


class Adam:
    """Adam with one learning rate per parameter-name prefix group."""

    def __init__(self, model: Model, lr_by_prefix: dict[str, float], b1=0.9, b2=0.999, eps=1e-8):
        self.params = model.params
        self.lr_by_prefix = lr_by_prefix
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def lr(self, name: str) -> float:
        for prefix, lr in self.lr_by_prefix.items():
            if name.startswith(prefix):
                return lr
        raise KeyError(f"parameter {name} is in no learning-rate group")

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            self.params[k].data -= self.lr(k) * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, extra: dict[str, np.ndarray]) -> None:
        self.t = int(extra["adam.t"][0])
        for k in self.m:
            self.m[k] = extra[f"adam.m.{k}"].copy()
            self.v[k] = extra[f"adam.v.{k}"].copy()


def split_heldout(examples: list[Example], fraction: float, seed: int):
    if fraction <= 0:
        return list(examples), []
    order = np.random.default_rng(seed).permutation(len(examples))
    n_held = max(1, int(round(fraction * len(examples))))
    held = sorted(order[:n_held].tolist())
    held_set = set(held)
    return [e for i, e in enumerate(examples) if i not in held_set], [examples[i] for i in held]


def em_of(model: Model, examples: list[Example], schemas: dict[str, Schema]) -> tuple[float, list[str]]:
    hits, preds = 0, []
    for ex in examples:
        s = schemas[ex.db_id]
        try:
            tree = model.predict(ex.question, s)
        except NoParse:
            tree = None
        hits += exact_set_match(tree, ex.tree)
        preds.append("" if tree is None else tree.key)
    return (hits / len(examples) if examples else 0.0), preds


def trainable(examples: list[Example], schemas: dict[str, Schema], dec: DecoderConfig):
    """Examples whose gold leaves are reachable and whose height fits in T."""
    keep, dropped = [], 0
    for ex in examples:
        q = tokenize(ex.question)
        if ex.tree.height <= dec.T and gold_leaves_reachable(q, schemas[ex.db_id], dec, ex.tree):
            keep.append(ex)
        else:
            dropped += 1
    return keep, dropped


@dataclass
class TrainResult:
    model: Model
    steps: int
    epochs_run: int
    best_em: float
    last_train_em: float
    history: list[dict]


def train(cfg: TrainConfig, examples: list[Example], schemas: dict[str, Schema], out_dir: str | Path,
          resume: str | Path | None = None, vocab: Vocab | None = None) -> TrainResult:
    """Run the loop; writes ``metrics.jsonl``, ``best.ckpt.json`` and ``last.ckpt.json`` in ``out_dir``."""
    if not examples:
        raise ValueError("empty training corpus")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dec_cfg = cfg.decoder_config()
    examples, dropped = trainable(examples, schemas, dec_cfg)
    if dropped:
        log.warning("skipping %d examples with unreachable gold leaves or height > T", dropped)
    if not examples:
        raise ValueError("no trainable examples")
    train_set, heldout = split_heldout(examples, cfg.heldout_fraction, cfg.seed)
    if vocab is None:
        vocab = Vocab.build([tokenize(e.question) for e in examples], schemas.values())

    start_step, start_epoch, best = 0, 0, -1.0
    if resume is not None:
        model, extra, meta = Model.load(resume)
        opt = Adam(model, {"enc.": cfg.lr_encoder, "dec.": cfg.lr_decoder})
        opt.load_state(extra)
        start_step, start_epoch = int(meta["step"]), int(meta["epoch"])
        best = float(meta.get("best_em", -1.0))
    else:
        model = Model.create(vocab, cfg.encoder_config(len(vocab)), dec_cfg, cfg.seed)
        opt = Adam(model, {"enc.": cfg.lr_encoder, "dec.": cfg.lr_decoder})

    metrics_path = out / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    history: list[dict] = []
    step = start_step
    per_step = cfg.batch_size * cfg.grad_accum
    train_em = 0.0
    epoch = start_epoch
    with metrics_path.open(mode) as mlog:
        for epoch in range(start_epoch, cfg.epochs):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
            losses = []
            for start in range(0, len(order), per_step):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = [train_set[i] for i in order[start:start + per_step]]
                rng = np.random.default_rng([cfg.seed, 1, step])
                loss_val = train_step(model, opt, batch, schemas, rng, cfg.clip_norm)
                if not math.isfinite(loss_val):
                    _abort(out, step, loss_val)
                losses.append(loss_val)
                step += 1
            eval_set = train_set if cfg.train_eval_limit is None else train_set[:cfg.train_eval_limit]
            train_em, _ = em_of(model, eval_set, schemas)
            held_em = em_of(model, heldout, schemas)[0] if heldout else None
            score = held_em if held_em is not None else train_em
            rec = {"epoch": epoch, "step": step,
                   "loss": float(np.mean(losses)) if losses else None,
                   "train_em": train_em, "heldout_em": held_em}
            mlog.write(json.dumps(rec, sort_keys=True) + "\n")
            mlog.flush()
            history.append(rec)
            log.info("epoch %d step %d loss %s train EM %.3f", epoch, step, rec["loss"], train_em)
            if score > best:
                best = score
                model.save(out / "best.ckpt.json", opt.state(), _meta(step, epoch + 1, best))
            done = ((cfg.max_steps is not None and step >= cfg.max_steps)
                    or (cfg.stop_at_train_em is not None and train_em >= cfg.stop_at_train_em)
                    or epoch + 1 == cfg.epochs)
            if done or (epoch + 1) % cfg.checkpoint_every == 0:
                model.save(out / "last.ckpt.json", opt.state(), _meta(step, epoch + 1, best))
            if done:
                break
    return TrainResult(model, step, epoch + 1 - start_epoch, best, train_em, history)


def _meta(step: int, epoch: int, best: float) -> dict:
    # checkpoints are taken at epoch boundaries; resuming starts at ``epoch``
    return {"step": step, "epoch": epoch, "best_em": best}


def train_step(model: Model, opt: Adam, batch: list[Example], schemas: dict[str, Schema],
               rng, clip_norm: float | None) -> float:
    """One optimizer step over ``batch``; returns the mean loss (non-finite means nothing was applied)."""
    total = {k: np.zeros_like(v.data) for k, v in model.params.items()}
    loss_sum = 0.0
    for ex in batch:
        model.params.zero_grad()
        try:
            loss = model.loss(ex.question, schemas[ex.db_id], ex.tree, rng=rng, training=True)
        except NumericError:
            return float("nan")
        if not math.isfinite(loss.item()):
            return float("nan")
        loss.backward()
        loss_sum += loss.item()
        for k in total:
            g = model.params[k].grad
            if g is not None:
                total[k] += g
    n = len(batch)
    grads = {k: g / n for k, g in total.items()}
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(norm):
        return float("nan")
    if clip_norm and norm > clip_norm:
        grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
    opt.step(grads)
    model.params.zero_grad()
    return loss_sum / n


def _abort(out: Path, step: int, loss_val: float):
    raise TrainingDiverged(f"non-finite loss {loss_val} at step {step}; "
                           f"last good checkpoint is {out / 'last.ckpt.json'}")


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
