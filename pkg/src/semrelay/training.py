"""Three-stage training curriculum, AdamW, one-cycle schedule, geometry
sampling.

Stage order is enforced through the model's stage tag: the noiseless decoder
stage, then source TX - relay RX over the S->R channel, then relay TX -
destination RX with the earlier chain frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .channel import (ChannelParams, LinkGeometry, apply_power_constraint,
                      equalize_path_loss, transmit)
from .semnet import SemanticRelayModel, greedy_token, update_state
from .textpipe import PAD

SCHEMES = ("slf", "spf")


class StageOrderError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    d_min_m: float = 2000.0
    d_max_m: float = 7000.0
    gamma_min: float = 0.2
    gamma_max: float = 0.8
    scheme: str = "slf"
    scale: str = "paper"
    seed: int = 0
    teacher_forcing: bool = False
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.d_min_m < self.d_max_m:
            raise ValueError("d_min must be below d_max")
        if not 0 < self.gamma_min < self.gamma_max < 1:
            raise ValueError("need 0 < gamma_min < gamma_max < 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=16, scale="toy")
        base.update(kw)
        return cls(**base)


@dataclass
class OptimizerState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params) -> "OptimizerState":
        return cls(0, [torch.zeros_like(p) for p in params],
                   [torch.zeros_like(p) for p in params])


def adamw_step(params, grads, state: OptimizerState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01) -> None:
    """Decoupled-weight-decay Adam update, in place."""
    state.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            p.mul_(1.0 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.add_(-lr * (m / bc1) / ((v / bc2).sqrt() + eps))


def one_cycle_lr(step: int, total_steps: int, peak_lr: float) -> float:
    """Cosine warmup from peak/25 over the first 30% of steps, then cosine
    anneal to peak/1e4."""
    if not 0 <= step <= total_steps:
        raise ValueError("step outside [0, total_steps]")
    start = peak_lr / 25.0
    end = peak_lr / 1e4
    warm = 0.30 * total_steps
    if warm <= 0:
        return peak_lr
    if step <= warm:
        return start + (peak_lr - start) * 0.5 * (1.0 - math.cos(math.pi * step / warm))
    return end + (peak_lr - end) * 0.5 * (
        1.0 + math.cos(math.pi * (step - warm) / (total_steps - warm))
    )


def get_distance(lo_m: float, hi_m: float, rng: np.random.Generator) -> float:
    if not lo_m < hi_m:
        raise ValueError("lower bound must be below upper bound")
    return float(rng.uniform(lo_m, hi_m))


def sample_geometry(cfg: TrainConfig, rng: np.random.Generator) -> LinkGeometry:
    d_sd = get_distance(cfg.d_min_m, cfg.d_max_m, rng)
    d_sr = get_distance(cfg.gamma_min * d_sd, cfg.gamma_max * d_sd, rng)
    return LinkGeometry(d_sd_m=d_sd, d_sr_m=d_sr)


# ---------------------------------------------------------------------------
# batching

def pad_batch(sentences, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """(B, Tmax) ids padded with PAD plus a boolean content mask."""
    t_max = max(len(s) for s in sentences)
    ids = torch.full((len(sentences), t_max), PAD, dtype=torch.long, device=device)
    mask = torch.zeros((len(sentences), t_max), dtype=torch.bool, device=device)
    for i, s in enumerate(sentences):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[i, : len(s)] = True
    return ids, mask


def iter_batches(sentences, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(sentences))
    for lo in range(0, len(sentences), batch_size):
        chunk = [sentences[i] for i in order[lo:lo + batch_size]]
        yield pad_batch(chunk)


# ---------------------------------------------------------------------------
# shared decode loop

def decode_loop(model: SemanticRelayModel, which: str, inputs: torch.Tensor,
                targets: torch.Tensor, mask: torch.Tensor, state_mode: str,
                teacher_forcing: bool = False):
    """Free-running (or teacher-forced) per-step decoding over a batch.

    inputs: (B, S, d) step input vectors; targets/mask: (B, S).
    state_mode "token" stores the decoder's embedding of each emitted token;
    "input" stores the step input vectors themselves (SPF relay state).
    Returns (summed masked CE, token count, decoded ids (B, S) int64).
    """
    dec = model.relay_decoder if which == "relay" else model.dest_decoder
    b, steps, _ = inputs.shape
    state = model.new_state()
    ce_sum = inputs.new_zeros(())
    decoded = np.zeros((b, steps), dtype=np.int64)
    for s in range(steps):
        x = inputs[:, s]
        logits = model.semantic_decode_step(x, state, which)
        ce = F.cross_entropy(logits, targets[:, s], reduction="none")
        ce_sum = ce_sum + (ce * mask[:, s]).sum()
        step_tokens = greedy_token(logits)
        decoded[:, s] = step_tokens
        if state_mode == "token":
            ids = targets[:, s] if teacher_forcing else torch.as_tensor(step_tokens)
            emb = dec.token_embedding(ids)
        elif state_mode == "input":
            emb = x
        else:
            raise ValueError(f"unknown state mode {state_mode!r}")
        state = update_state(state, step_tokens, emb)
    return ce_sum, int(mask.sum()), decoded


def _step_inputs(enc: torch.Tensor, scheme: str, steps: int) -> torch.Tensor:
    """Per-step encoder slices: index t for SLF, t-1 for SPF (0 is [CLS])."""
    if scheme == "slf":
        return enc[:, 1:steps + 1]
    return enc[:, 0:steps]


class _Trainer:
    def __init__(self, cfg: TrainConfig, model: SemanticRelayModel, n_batches: int,
                 log_path: str | None, stage: str):
        self.cfg = cfg
        self.stage = stage
        self.params = [p for p in model.parameters() if p.requires_grad]
        self.opt = OptimizerState.for_params(self.params)
        self.total_steps = max(cfg.epochs * n_batches, 1)
        self.log_path = log_path
        if log_path:
            with open(log_path, "a", encoding="utf-8") as f:
                if f.tell() == 0:
                    f.write("step,stage,loss,lr,seed\n")

    def step(self, loss: torch.Tensor, model: SemanticRelayModel) -> float:
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss during stage {self.stage}")
        lr = one_cycle_lr(min(self.opt.step, self.total_steps - 1),
                          self.total_steps - 1 if self.total_steps > 1 else 1,
                          self.cfg.learning_rate)
        model.zero_grad(set_to_none=True)
        loss.backward()
        grads = [p.grad if p.grad is not None else torch.zeros_like(p)
                 for p in self.params]
        adamw_step(self.params, grads, self.opt, lr, self.cfg.betas, self.cfg.eps,
                   self.cfg.weight_decay)
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(f"{self.opt.step},{self.stage},{float(loss.detach()):.6f},"
                        f"{lr:.6e},{self.cfg.seed}\n")
        return float(loss.detach())


def _n_batches(n: int, batch_size: int) -> int:
    return (n + batch_size - 1) // batch_size


def train_semantic_decoder(cfg: TrainConfig, model: SemanticRelayModel,
                           sentences, log_path: str | None = None) -> list[float]:
    """Noiseless stage: encoder embeddings feed both semantic decoders
    directly; returns per-epoch mean losses."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    relay_mode = "token" if cfg.scheme == "slf" else "input"
    trainer = _Trainer(cfg, model, _n_batches(len(sentences), cfg.batch_size),
                       log_path, "decoder")
    epoch_losses = []
    for _epoch in range(cfg.epochs):
        losses = []
        for ids, mask in iter_batches(sentences, cfg.batch_size, rng):
            enc = model.semantic_encode(ids)
            steps = ids.shape[1]
            inputs = _step_inputs(enc, cfg.scheme, steps)
            ce_r, n_tok, _ = decode_loop(model, "relay", inputs, ids, mask,
                                         relay_mode, cfg.teacher_forcing)
            ce_d, _, _ = decode_loop(model, "destination", inputs, ids, mask,
                                     "token", cfg.teacher_forcing)
            loss = (ce_r + ce_d) / (2 * max(n_tok, 1))
            losses.append(trainer.step(loss, model))
        epoch_losses.append(float(np.mean(losses)))
    model.stage = "decoder"
    return epoch_losses


def _relay_received(model, enc, scheme, steps, geom, params, rng):
    """Source-encoded slices through the S->R channel, channel-decoded."""
    x = model.channel_encode(_step_inputs(enc, scheme, steps), "source")
    xb, _ = apply_power_constraint(x, params)
    y = equalize_path_loss(transmit(xb, geom.d_sr_m, params, rng),
                           geom.d_sr_m, params)
    return model.channel_decode(y, "relay"), xb


def train_source_relay(cfg: TrainConfig, model: SemanticRelayModel, sentences,
                       params: ChannelParams, log_path: str | None = None) -> list[float]:
    """Source TX - relay RX over the S->R channel with fresh geometry per batch."""
    if model.stage not in ("decoder", "src_relay"):
        raise StageOrderError("source/relay training requires the decoder stage first")
    torch.manual_seed(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 1)
    relay_mode = "token" if cfg.scheme == "slf" else "input"
    trainer = _Trainer(cfg, model, _n_batches(len(sentences), cfg.batch_size),
                       log_path, "src_relay")
    epoch_losses = []
    for _epoch in range(cfg.epochs):
        losses = []
        for ids, mask in iter_batches(sentences, cfg.batch_size, rng):
            geom = sample_geometry(cfg, rng)
            enc = model.semantic_encode(ids)
            v, _ = _relay_received(model, enc, cfg.scheme, ids.shape[1], geom,
                                   params, rng)
            ce, n_tok, _ = decode_loop(model, "relay", v, ids, mask, relay_mode,
                                       cfg.teacher_forcing)
            loss = ce / max(n_tok, 1)
            losses.append(trainer.step(loss, model))
        epoch_losses.append(float(np.mean(losses)))
    model.stage = "src_relay"
    return epoch_losses


FROZEN_IN_STAGE3 = ("encoder.", "enc_source.", "dec_relay.", "relay_decoder.")


def train_relay_destination(cfg: TrainConfig, model: SemanticRelayModel, sentences,
                            params: ChannelParams, log_path: str | None = None,
                            source_only: bool = False) -> list[float]:
    """Relay TX - destination RX over all three links; the trained source
    TX - relay RX chain is frozen. With source_only the relay stays silent
    (ablation for the cooperation gain)."""
    if model.stage != "src_relay":
        raise StageOrderError(
            f"relay/destination training requires a src_relay checkpoint, "
            f"found stage {model.stage!r}")
    torch.manual_seed(cfg.seed + 2)
    rng = np.random.default_rng(cfg.seed + 2)
    for name, p in model.named_parameters():
        if name.startswith(FROZEN_IN_STAGE3):
            p.requires_grad_(False)
    relay_mode = "token" if cfg.scheme == "slf" else "input"
    trainer = _Trainer(cfg, model, _n_batches(len(sentences), cfg.batch_size),
                       log_path, "relay_dst")
    epoch_losses = []
    for _epoch in range(cfg.epochs):
        losses = []
        for ids, mask in iter_batches(sentences, cfg.batch_size, rng):
            geom = sample_geometry(cfg, rng)
            steps = ids.shape[1]
            with torch.no_grad():
                enc = model.semantic_encode(ids)
                v_r, _ = _relay_received(model, enc, cfg.scheme, steps, geom,
                                         params, rng)
                _, _, relay_tokens = decode_loop(model, "relay", v_r, ids, mask,
                                                 relay_mode)
                relay_ids = torch.from_numpy(relay_tokens)
                relay_enc = model.semantic_encode(relay_ids, causal=True)[:, 1:]
                # destination's direct branch always carries index t
                x_direct = model.channel_encode(enc[:, 1:steps + 1], "source")
                x_src, _ = apply_power_constraint(x_direct, params)
            if source_only:
                y_r = torch.zeros_like(x_src)
            else:
                x_r = model.channel_encode(relay_enc, "relay")
                xb_r, _ = apply_power_constraint(x_r, params)
                y_r = equalize_path_loss(transmit(xb_r, geom.d_rd_m, params, rng),
                                         geom.d_rd_m, params)
            y_s1 = equalize_path_loss(transmit(x_src, geom.d_sd_m, params, rng),
                                      geom.d_sd_m, params)
            v1 = model.channel_decode(y_s1, "dest_src_branch")
            v2 = model.channel_decode(y_r, "dest_relay_branch")
            fused = model.fuse_destination(v1, v2)
            ce, n_tok, _ = decode_loop(model, "destination", fused, ids, mask,
                                       "token", cfg.teacher_forcing)
            loss = ce / max(n_tok, 1)
            losses.append(trainer.step(loss, model))
        epoch_losses.append(float(np.mean(losses)))
    for p in model.parameters():
        p.requires_grad_(True)
    model.stage = "source_only" if source_only else "relay_dst"
    return epoch_losses
