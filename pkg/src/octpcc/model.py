"""The enhanced occupancy context model.

Pipeline per node: feature embeddings -> masked multi-head self-attention
-> weighted context wc_i (target slot output) -> context feature residual
r_i = wc_i - wc_{i-1} -> both heads consume [wc_i ; r_i].  The main head is
a two-layer MLP ending in a 255-way softmax; the branch head is an MLP
ending in 8 sigmoids (per-child occupancy).  The branch output is fused
into the main head by concatenation with the main MLP's penultimate
activation before the final linear layer.

Ablation toggles: enable_residual feeds a zero vector instead of r_i;
enable_branch feeds zeros into the fusion slot.  All four combinations
share one checkpoint schema.

Training is two-stage: first only the branch parameters learn (MSE loss),
then the branch is frozen and everything else learns (cross-entropy).
Batches preserve the breadth-first node order so residual pairing during
training matches what the codec does at encode time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import nn
from .context import ContextAssembler, ContextConfig, ContextWindow
from .errors import InvalidInput, NumericalError
from .octree import NodeSequence

PROB_FLOOR = 1e-6  # uniform mixing weight; keeps every class strictly positive
LOG2 = math.log(2.0)
MAX_TREE_DEPTH = 21


@dataclass(frozen=True)
class ModelConfig:
    ctx: ContextConfig = field(default_factory=ContextConfig)
    d_embed: int = 16
    d_model: int = 64
    d_hidden_main: int = 128
    d_hidden_branch: int = 64
    heads: int = 4
    attn_layers: int = 1
    layer_norm: bool = False
    enable_residual: bool = True
    enable_branch: bool = True
    max_depth: int = MAX_TREE_DEPTH
    seed: int = 0

    def __post_init__(self):
        if min(self.d_embed, self.d_model, self.d_hidden_main,
               self.d_hidden_branch, self.heads, self.attn_layers) < 1:
            raise InvalidInput("model dimensions must be positive")
        if self.d_model % self.heads:
            raise InvalidInput("d_model must be divisible by heads")

    @property
    def variant(self) -> str:
        """What the ablation toggles actually enable."""
        names = {(False, False): "plain", (True, False): "residual",
                 (False, True): "branch", (True, True): "residual+branch"}
        return names[(self.enable_residual, self.enable_branch)]

    def to_dict(self) -> dict:
        return {
            "n_window": self.ctx.n_window, "k_ancestors": self.ctx.k_ancestors,
            "strict_level": self.ctx.strict_level, "d_embed": self.d_embed,
            "d_model": self.d_model, "d_hidden_main": self.d_hidden_main,
            "d_hidden_branch": self.d_hidden_branch, "heads": self.heads,
            "attn_layers": self.attn_layers, "layer_norm": self.layer_norm,
            "enable_residual": self.enable_residual,
            "enable_branch": self.enable_branch, "max_depth": self.max_depth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        ctx = ContextConfig(n_window=d["n_window"], k_ancestors=d["k_ancestors"],
                            strict_level=d["strict_level"])
        keys = ("d_embed", "d_model", "d_hidden_main", "d_hidden_branch",
                "heads", "attn_layers", "layer_norm", "enable_residual",
                "enable_branch", "max_depth", "seed")
        return cls(ctx=ctx, **{k: d[k] for k in keys})

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Production-sized preset (1024-slot window, 4 ancestors, 552 hidden)."""
        base = cls(ctx=ContextConfig(n_window=1024, k_ancestors=4),
                   d_embed=32, d_model=128, d_hidden_main=552,
                   d_hidden_branch=128)
        return replace(base, **overrides) if overrides else base

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = cls(ctx=ContextConfig(n_window=8, k_ancestors=1),
                   d_embed=4, d_model=16, d_hidden_main=32,
                   d_hidden_branch=16, heads=4)
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class TrainSchedule:
    branch_epochs: int = 1
    main_epochs: int = 3
    lr: float = 1e-3
    lr_decay: float = 0.95
    batch_size: int = 32
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


class TraceRecord(NamedTuple):
    stage: int        # 1 = branch/MSE, 2 = main/cross-entropy
    batch_index: int  # global batch counter
    ce_loss: float    # bits per node
    mse_loss: float
    lr: float


class ForwardResult(NamedTuple):
    wc: np.ndarray      # (d_model,) weighted context of the target
    dist: np.ndarray    # (255,) occupancy distribution, floored, sums to 1
    branch: np.ndarray  # (8,) per-child occupancy probabilities


def _glorot(rng, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig) -> nn.ParamStore:
    rng = np.random.default_rng(cfg.seed)
    p = nn.ParamStore()
    e, d = cfg.d_embed, cfg.d_model
    p.add("embed.occupancy", rng.normal(0.0, 0.02, size=(256, e)))
    p.add("embed.level", rng.normal(0.0, 0.02, size=(cfg.max_depth + 1, e)))
    p.add("embed.octant", rng.normal(0.0, 0.02, size=(8, e)))
    slot_in = (cfg.ctx.k_ancestors + 1) * 3 * e
    p.add("slot.w", _glorot(rng, slot_in, d))
    p.add("slot.b", np.zeros(d))
    for layer in range(cfg.attn_layers):
        pre = f"attn{layer}."
        for nm in ("wq", "wk", "wv", "wo"):
            p.add(pre + nm, _glorot(rng, d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            p.add(pre + nm, np.zeros(d))
        if cfg.layer_norm:
            p.add(pre + "ln_g", np.ones(d))
            p.add(pre + "ln_b", np.zeros(d))
    p.add("main.w1", _glorot(rng, 2 * d, cfg.d_hidden_main))
    p.add("main.b1", np.zeros(cfg.d_hidden_main))
    p.add("main.w2", _glorot(rng, cfg.d_hidden_main + 8, 255))
    p.add("main.b2", np.zeros(255))
    p.add("branch.w1", _glorot(rng, 2 * d, cfg.d_hidden_branch))
    p.add("branch.b1", np.zeros(cfg.d_hidden_branch))
    p.add("branch.w2", _glorot(rng, cfg.d_hidden_branch, 8))
    p.add("branch.b2", np.zeros(8))
    return p


def branch_param_names(params: nn.ParamStore):
    return [n for n in params.names() if n.startswith("branch.")]


def main_param_names(params: nn.ParamStore):
    return [n for n in params.names() if not n.startswith("branch.")]


def zero_head_layers(model: "ContextModel") -> "ContextModel":
    """Zero both output layers; the main head then emits the uniform 1/255."""
    for name in ("main.w2", "main.b2", "branch.w2", "branch.b2"):
        model.params[name] = np.zeros_like(model.params[name])
    return model


class ContextModel:
    """Bundles a ModelConfig with its ParamStore; encoder and decoder share it."""

    def __init__(self, cfg: ModelConfig, params: nn.ParamStore):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig) -> "ContextModel":
        return cls(cfg, init_params(cfg))

    @classmethod
    def load(cls, path) -> "ContextModel":
        params, config = nn.load_checkpoint(path)
        return cls(ModelConfig.from_dict(config), params)

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.params, self.cfg.to_dict())

    def digest(self) -> bytes:
        return nn.checkpoint_digest(self.params, self.cfg.to_dict())

    # ------------------------------------------------------------------
    # inference path (plain numpy; used by both encoder and decoder)
    # ------------------------------------------------------------------

    def _embed_np(self, slots: np.ndarray) -> np.ndarray:
        P = self.params
        occ = P["embed.occupancy"][slots[..., 0]]
        lvl = P["embed.level"][slots[..., 1]]
        octn = P["embed.octant"][slots[..., 2]]
        feat = np.concatenate((occ, lvl, octn), axis=-1)
        feat = feat.reshape(*feat.shape[:-2], -1)
        return feat @ P["slot.w"] + P["slot.b"]

    def _attend_np(self, x: np.ndarray, valid: np.ndarray) -> np.ndarray:
        """x (..., N, d) -> weighted context (..., d) at the target slot."""
        P, cfg = self.params, self.cfg
        n, d = x.shape[-2], x.shape[-1]
        dh = d // cfg.heads
        lead = x.shape[:-2]
        bias = nn.mask_bias(valid).reshape(*lead, 1, 1, n)
        for layer in range(cfg.attn_layers):
            pre = f"attn{layer}."
            last = layer == cfg.attn_layers - 1
            queries = x[..., -1:, :] if last else x
            nq = queries.shape[-2]
            q = (queries @ P[pre + "wq"] + P[pre + "bq"]) \
                .reshape(*lead, nq, cfg.heads, dh).swapaxes(-3, -2)
            k = (x @ P[pre + "wk"] + P[pre + "bk"]) \
                .reshape(*lead, n, cfg.heads, dh).swapaxes(-3, -2)
            v = (x @ P[pre + "wv"] + P[pre + "bv"]) \
                .reshape(*lead, n, cfg.heads, dh).swapaxes(-3, -2)
            scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)) + bias
            weights = nn.softmax_np(scores, axis=-1)
            ctx = (weights @ v).swapaxes(-3, -2).reshape(*lead, nq, d)
            out = ctx @ P[pre + "wo"] + P[pre + "bo"]
            if cfg.layer_norm:
                mu = out.mean(axis=-1, keepdims=True)
                var = ((out - mu) ** 2).mean(axis=-1, keepdims=True)
                out = (out - mu) / np.sqrt(var + 1e-5) * P[pre + "ln_g"] + P[pre + "ln_b"]
            x = out
        return x[..., -1, :]

    def _heads_np(self, wc: np.ndarray, r: np.ndarray):
        P, cfg = self.params, self.cfg
        h = np.concatenate((wc, r), axis=-1)
        a1 = np.maximum(h @ P["main.w1"] + P["main.b1"], 0.0)
        hb = np.maximum(h @ P["branch.w1"] + P["branch.b1"], 0.0)
        o = nn.sigmoid_np(hb @ P["branch.w2"] + P["branch.b2"])
        fusion = o if cfg.enable_branch else np.zeros_like(o)
        z = np.concatenate((a1, fusion), axis=-1) @ P["main.w2"] + P["main.b2"]
        p = nn.softmax_np(z, axis=-1)
        q = (1.0 - PROB_FLOOR) * p + (PROB_FLOOR / 255.0)
        return q, o, a1

    def predict(self, slots: np.ndarray, valid: np.ndarray, wc_prev):
        """Single-window fast path: (wc, dist, branch) as raw arrays.

        The codec calls exactly this on both sides, one node at a time, so
        the float sequence, and therefore every frequency table, is
        identical during encode and decode.
        """
        x = self._embed_np(slots)
        wc = self._attend_np(x, valid)
        if self.cfg.enable_residual and wc_prev is not None:
            r = wc - wc_prev
        else:
            r = np.zeros_like(wc)
        q, o, _ = self._heads_np(wc, r)
        return wc, q, o

    def forward(self, window: ContextWindow, wc_prev=None) -> ForwardResult:
        wc, q, o = self.predict(window.slots, window.valid, wc_prev)
        return ForwardResult(wc=wc, dist=q, branch=o)

    def weighted_contexts(self, seq: NodeSequence, chunk: int = 512) -> np.ndarray:
        """wc for every node, batched (training/analysis use; not the codec)."""
        asm = ContextAssembler(seq, self.cfg.ctx)
        out = np.empty((len(seq), self.cfg.d_model))
        for start in range(0, len(seq), chunk):
            stop = min(start + chunk, len(seq))
            slots, valid = asm.window_block(start, stop)
            out[start:stop] = self._attend_np(self._embed_np(slots), valid)
        return out

    def _residuals_from_wc(self, wc: np.ndarray) -> np.ndarray:
        r = np.zeros_like(wc)
        if self.cfg.enable_residual and wc.shape[0] > 1:
            r[1:] = wc[1:] - wc[:-1]
        return r

    def distributions(self, seq: NodeSequence, chunk: int = 512):
        """(dists (n,255), first-layer activations (n,hidden)) for a sequence."""
        wc = self.weighted_contexts(seq, chunk)
        q, _, a1 = self._heads_np(wc, self._residuals_from_wc(wc))
        return q, a1

    def sequence_entropy(self, seq: NodeSequence, chunk: int = 512) -> float:
        """Ideal codelength in bits: sum of -log2 q(x_i | c_i) in encode order."""
        q, _ = self.distributions(seq, chunk)
        picked = q[np.arange(len(seq)), seq.occupancy - 1]
        return float(-np.log2(picked).sum())

    # ------------------------------------------------------------------
    # training path (tape)
    # ------------------------------------------------------------------

    def _attend_tape(self, tape, x, valid):
        cfg = self.cfg
        n, d = x.shape[-2], x.shape[-1]
        dh = d // cfg.heads
        lead = x.shape[:-2]
        bias = nn.constant(nn.mask_bias(valid).reshape(*lead, 1, 1, n))
        for layer in range(cfg.attn_layers):
            pre = f"attn{layer}."
            last = layer == cfg.attn_layers - 1
            queries = x[..., -1:, :] if last else x
            nq = queries.shape[-2]
            q = (queries @ tape[pre + "wq"] + tape[pre + "bq"]) \
                .reshape(*lead, nq, cfg.heads, dh).swapaxes(-3, -2)
            k = (x @ tape[pre + "wk"] + tape[pre + "bk"]) \
                .reshape(*lead, n, cfg.heads, dh).swapaxes(-3, -2)
            v = (x @ tape[pre + "wv"] + tape[pre + "bv"]) \
                .reshape(*lead, n, cfg.heads, dh).swapaxes(-3, -2)
            scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh)) + bias
            weights = nn.softmax(scores, axis=-1)
            ctx = (weights @ v).swapaxes(-3, -2).reshape(*lead, nq, d)
            out = ctx @ tape[pre + "wo"] + tape[pre + "bo"]
            if cfg.layer_norm:
                out = nn.layer_norm(out, tape[pre + "ln_g"], tape[pre + "ln_b"])
            x = out
        return x[..., -1, :]

    def batch_losses(self, tape, slots, valid, labels, leading_prev: bool):
        """(ce, mse) Tensors for one training batch.

        slots/valid cover the batch targets plus, when leading_prev, one
        extra leading window whose wc seeds the first residual.
        """
        cfg = self.cfg
        occ = nn.embedding(tape["embed.occupancy"], slots[..., 0])
        lvl = nn.embedding(tape["embed.level"], slots[..., 1])
        octn = nn.embedding(tape["embed.octant"], slots[..., 2])
        feat = nn.concat((occ, lvl, octn), axis=-1)
        feat = feat.reshape(slots.shape[0], slots.shape[1], -1)
        x = feat @ tape["slot.w"] + tape["slot.b"]
        wc_all = self._attend_tape(tape, x, valid)
        if cfg.enable_residual:
            if leading_prev:
                wc = wc_all[1:]
                r = wc_all[1:] - wc_all[:-1]
            elif wc_all.shape[0] > 1:
                wc = wc_all
                zero = nn.constant(np.zeros((1, cfg.d_model)))
                r = nn.concat((zero, wc_all[1:] - wc_all[:-1]), axis=0)
            else:
                wc = wc_all
                r = nn.constant(np.zeros((1, cfg.d_model)))
        else:
            wc = wc_all
            r = nn.constant(np.zeros((wc_all.shape[0], cfg.d_model)))
        h = nn.concat((wc, r), axis=1)
        a1 = (h @ tape["main.w1"] + tape["main.b1"]).relu()
        hb = (h @ tape["branch.w1"] + tape["branch.b1"]).relu()
        o = (hb @ tape["branch.w2"] + tape["branch.b2"]).sigmoid()
        fusion = o if cfg.enable_branch else nn.constant(np.zeros(o.shape))
        z = nn.concat((a1, fusion), axis=1) @ tape["main.w2"] + tape["main.b2"]
        p = nn.softmax(z, axis=-1)
        q = p * (1.0 - PROB_FLOOR) + nn.constant(PROB_FLOOR / 255.0)
        picked = nn.take_along_last(q, np.asarray(labels, dtype=np.int64) - 1)
        ce = picked.log().mean() * (-1.0 / LOG2)
        bits = ((np.asarray(labels)[:, None] >> np.arange(8)) & 1).astype(np.float64)
        diff = nn.constant(bits) - o
        mse = (diff * diff).mean()
        return ce, mse


def loss_ce(q: np.ndarray, occupancy: int) -> float:
    """Cross-entropy against the one-hot label, in bits: -log2 q[occ-1]."""
    if not (1 <= occupancy <= 255):
        raise InvalidInput("occupancy must be in [1, 255]")
    return float(-np.log2(q[occupancy - 1]))


def loss_mse(o: np.ndarray, l) -> float:
    """Mean squared error between branch output and the 8 child-occupied bits."""
    l = np.asarray(l, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if o.shape != (8,) or l.shape != (8,):
        raise InvalidInput("branch vector and label must both have 8 entries")
    return float(((l - o) ** 2).mean())


def occupancy_bits(occ) -> np.ndarray:
    """8 child-occupied booleans of an occupancy code (bit j = octant j)."""
    return ((np.asarray(occ)[..., None] >> np.arange(8)) & 1).astype(bool)


def train(model: ContextModel, corpus, schedule: TrainSchedule = TrainSchedule()):
    """Two-stage training; returns the per-batch loss trace.

    Stage 1 updates only branch parameters against the MSE loss; stage 2
    freezes them and updates everything else against cross-entropy.  The
    per-epoch learning rate is lr * lr_decay**epoch within each stage.
    No shuffling: residual pairing needs the serialized node order.
    """
    if not corpus:
        raise InvalidInput("training corpus is empty")
    cfg = model.cfg
    assemblers = [ContextAssembler(seq, cfg.ctx) for seq in corpus]
    trace: list[TraceRecord] = []
    batch_counter = 0
    for stage in (1, 2):
        epochs = schedule.branch_epochs if stage == 1 else schedule.main_epochs
        if stage == 1:
            group = set(branch_param_names(model.params))
        else:
            group = set(main_param_names(model.params))
        for epoch in range(epochs):
            lr = schedule.lr * schedule.lr_decay ** epoch
            for seq, asm in zip(corpus, assemblers):
                for start in range(0, len(seq), schedule.batch_size):
                    stop = min(start + schedule.batch_size, len(seq))
                    lead = cfg.enable_residual and start > 0
                    slots, valid = asm.window_block(start - (1 if lead else 0), stop)
                    labels = seq.occupancy[start:stop]
                    tape = model.params.tape()
                    ce, mse = model.batch_losses(tape, slots, valid, labels, lead)
                    loss = mse if stage == 1 else ce
                    if not np.isfinite(loss.data):
                        raise NumericalError("non-finite training loss")
                    loss.backward()
                    grads = {name: tape[name].grad for name in group
                             if tape[name].grad is not None}
                    nn.adam_step(model.params, grads, lr, schedule.betas,
                                 schedule.eps)
                    trace.append(TraceRecord(stage, batch_counter,
                                             float(ce.data), float(mse.data), lr))
                    batch_counter += 1
    return trace


def write_trace(path, trace) -> None:
    """CSV-like loss trace: batch_index, ce_loss, mse_loss."""
    with open(path, "w") as f:
        f.write("batch_index,ce_loss,mse_loss\n")
        for rec in trace:
            f.write(f"{rec.batch_index},{rec.ce_loss:.6f},{rec.mse_loss:.6f}\n")
