"""Trainable blocks: semantic encoder, FC channel codecs, causal semantic
decoders with semantic state, and the destination fusion projection.

All modules are plain PyTorch; attention is implemented locally so a toy
configuration can be checked against independent forward-math oracles.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, asdict, replace

import numpy as np
import torch
import torch.nn as nn

from .textpipe import CLS

ENCODER_SIDES = ("source", "relay")
DECODER_BRANCHES = ("relay", "dest_src_branch", "dest_relay_branch")
DECODER_SIDES = ("relay", "destination")

CKPT_MAGIC = "SEMRELAY-CKPT v1"


@dataclass
class ModelConfig:
    vocab_size: int
    d_emb: int = 384
    channel_dim: int = 256  # 2D reals = 128 complex uses per token
    n_blocks: int = 6
    n_heads: int = 6
    enc_blocks: int = 4
    max_len: int = 30
    ff_mult: int = 4
    dropout: float = 0.0
    seed: int = 0

    @classmethod
    def paper(cls, vocab_size: int, **kw) -> "ModelConfig":
        return cls(vocab_size=vocab_size, **kw)

    @classmethod
    def toy(cls, vocab_size: int, **kw) -> "ModelConfig":
        base = cls(vocab_size=vocab_size, d_emb=64, n_blocks=2, n_heads=2,
                   enc_blocks=2)
        return replace(base, **kw)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError("d_emb must divide evenly across heads")
        self.heads = heads
        self.d_head = d // heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        b, t, d = x.shape
        def split(m):
            return m(x).view(b, t, self.heads, self.d_head).transpose(1, 2)
        q, k, v = split(self.q), split(self.k), split(self.v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if causal:
            mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), 1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(ctx)


class TransformerBlock(nn.Module):
    def __init__(self, d: int, heads: int, ff_mult: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(
            nn.Linear(d, ff_mult * d), nn.GELU(), nn.Linear(ff_mult * d, d)
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        x = x + self.drop(self.attn(self.ln1(x), causal))
        x = x + self.drop(self.ff(self.ln2(x)))
        return x


class SemanticEncoder(nn.Module):
    """Bidirectional by default; the relay re-encodes with a causal mask."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_emb)
        self.pos = nn.Embedding(cfg.max_len + 2, cfg.d_emb)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d_emb, cfg.n_heads, cfg.ff_mult, cfg.dropout)
            for _ in range(cfg.enc_blocks)
        )
        self.ln = nn.LayerNorm(cfg.d_emb)

    def forward(self, ids: torch.Tensor, causal: bool = False) -> torch.Tensor:
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise ValueError("expected a non-empty (batch, T) id tensor")
        b, t = ids.shape
        cls_col = torch.full((b, 1), CLS, dtype=torch.long, device=ids.device)
        full = torch.cat([cls_col, ids], dim=1)
        x = self.tok(full) + self.pos.weight[: t + 1][None]
        for blk in self.blocks:
            x = blk(x, causal)
        return self.ln(x)


class ChannelCodec(nn.Module):
    """Single FC layer, feature-axis normalization, PReLU."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.fc = nn.Linear(d_in, d_out)
        self.norm = nn.LayerNorm(d_out, eps=1e-5)
        self.act = nn.PReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.fc(x)))


class SemanticDecoder(nn.Module):
    """Causal attention over the semantic state plus the current input."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_len = cfg.max_len
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_emb)
        self.pos = nn.Embedding(cfg.max_len + 2, cfg.d_emb)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d_emb, cfg.n_heads, cfg.ff_mult, cfg.dropout)
            for _ in range(cfg.n_blocks)
        )
        self.ln = nn.LayerNorm(cfg.d_emb)
        self.head = nn.Linear(cfg.d_emb, cfg.vocab_size)

    def token_embedding(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok(ids)

    def forward_vectors(self, seq: torch.Tensor) -> torch.Tensor:
        """Vocabulary logits at the final position of a (B, t, d) sequence."""
        b, t, d = seq.shape
        if t > self.max_len + 2:
            raise ValueError("sequence exceeds the positional table")
        x = seq + self.pos.weight[:t][None]
        for blk in self.blocks:
            x = blk(x, causal=True)
        return self.head(self.ln(x[:, -1]))


class SemanticState:
    """Append-only record of decoded/predicted tokens with their embeddings."""

    def __init__(self, max_len: int, tokens=None, embeddings=None):
        self.max_len = max_len
        self.tokens: list = list(tokens) if tokens else []
        self.embeddings: list = list(embeddings) if embeddings else []

    def __len__(self) -> int:
        return len(self.tokens)


def update_state(state: SemanticState, token, embedding: torch.Tensor) -> SemanticState:
    """New state with one more entry; prior entries are shared unchanged."""
    if len(state) >= state.max_len + 1:
        raise ValueError(f"semantic state would exceed {state.max_len + 1} entries")
    return SemanticState(state.max_len, state.tokens + [token],
                         state.embeddings + [embedding])


def greedy_token(logits):
    """Argmax token id(s) with lowest-id tie-break (first maximum)."""
    if isinstance(logits, torch.Tensor):
        arr = logits.detach().cpu().numpy()
    else:
        arr = np.asarray(logits)
    if not np.isfinite(arr).all():
        raise ValueError("logits must be finite")
    idx = np.argmax(arr, axis=-1)
    return int(idx) if arr.ndim == 1 else idx


class SemanticRelayModel(nn.Module):
    """All learned components of the SLF/SPF pipelines."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stage = "init"
        self.encoder = SemanticEncoder(cfg)
        self.enc_source = ChannelCodec(cfg.d_emb, cfg.channel_dim)
        self.enc_relay = ChannelCodec(cfg.d_emb, cfg.channel_dim)
        self.dec_relay = ChannelCodec(cfg.channel_dim, cfg.d_emb)
        self.dec_dest_src = ChannelCodec(cfg.channel_dim, cfg.d_emb)
        self.dec_dest_relay = ChannelCodec(cfg.channel_dim, cfg.d_emb)
        self.fusion = nn.Linear(2 * cfg.d_emb, cfg.d_emb)
        self.relay_decoder = SemanticDecoder(cfg)
        self.dest_decoder = SemanticDecoder(cfg)
        self._init_params(cfg.seed)

    def _init_params(self, seed: int):
        g = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            with torch.no_grad():
                if p.ndim >= 2:
                    bound = 1.0 / math.sqrt(p.shape[-1])
                    p.uniform_(-bound, bound, generator=g)
                elif "bias" in name:
                    p.zero_()
                elif "act.weight" in name:
                    p.fill_(0.25)
                elif "norm" in name or "ln" in name:
                    p.fill_(1.0)

    # -- spec operations -------------------------------------------------

    def semantic_encode(self, ids: torch.Tensor, causal: bool = False) -> torch.Tensor:
        """(B, T) ids -> (B, T+1, d) embeddings, position 0 the sentence slot."""
        return self.encoder(ids, causal=causal)

    def channel_encode(self, e: torch.Tensor, which: str) -> torch.Tensor:
        if which not in ENCODER_SIDES:
            raise ValueError(f"unknown encoder side {which!r}")
        codec = self.enc_source if which == "source" else self.enc_relay
        return codec(e)

    def channel_decode(self, y: torch.Tensor, which: str) -> torch.Tensor:
        if which not in DECODER_BRANCHES:
            raise ValueError(f"unknown decoder branch {which!r}")
        codec = {"relay": self.dec_relay, "dest_src_branch": self.dec_dest_src,
                 "dest_relay_branch": self.dec_dest_relay}[which]
        return codec(y)

    def semantic_decode_step(self, x: torch.Tensor, state: SemanticState,
                             which: str) -> torch.Tensor:
        if which not in DECODER_SIDES:
            raise ValueError(f"unknown decoder {which!r}")
        if len(state) > self.cfg.max_len:
            raise ValueError("semantic state longer than the maximum length")
        dec = self.relay_decoder if which == "relay" else self.dest_decoder
        parts = [e.unsqueeze(1) for e in state.embeddings] + [x.unsqueeze(1)]
        return dec.forward_vectors(torch.cat(parts, dim=1))

    def fuse_destination(self, v_src: torch.Tensor, v_relay: torch.Tensor) -> torch.Tensor:
        return self.fusion(torch.cat([v_src, v_relay], dim=-1))

    def new_state(self) -> SemanticState:
        return SemanticState(self.cfg.max_len)


def forward_backward(model: nn.Module, loss_fn) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss value and per-parameter gradients for one differentiable pipeline."""
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss in stage {getattr(model, 'stage', '?')}")
    loss.backward()
    grads = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for n, p in model.named_parameters()}
    return float(loss.detach()), grads


# ---------------------------------------------------------------------------
# Checkpoint format: text header, then length-prefixed little-endian float32
# records, one per tensor, in header order.

def save_checkpoint(model: SemanticRelayModel, path: str) -> None:
    header = io.StringIO()
    header.write(CKPT_MAGIC + "\n")
    header.write(f"stage {model.stage}\n")
    for key, val in asdict(model.cfg).items():
        header.write(f"config {key} {val}\n")
    names = []
    for name, p in model.named_parameters():
        shape = ",".join(str(s) for s in p.shape)
        header.write(f"tensor {name} {shape}\n")
        names.append(name)
    header.write("END\n")
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        params = dict(model.named_parameters())
        for name in names:
            data = params[name].detach().cpu().to(torch.float32).numpy().ravel()
            f.write(struct.pack("<I", data.size))
            f.write(data.astype("<f4").tobytes())


def load_checkpoint(path: str) -> SemanticRelayModel:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.index(b"END\n") + len(b"END\n")
    lines = blob[:end].decode("utf-8").splitlines()
    if lines[0] != CKPT_MAGIC:
        raise ValueError("not a semrelay checkpoint")
    stage = "init"
    cfg_kv: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        if line == "END":
            break
        kind, _, rest = line.partition(" ")
        if kind == "stage":
            stage = rest
        elif kind == "config":
            key, _, val = rest.partition(" ")
            cfg_kv[key] = val
        elif kind == "tensor":
            name, _, shape = rest.rpartition(" ")
            tensors.append((name, tuple(int(s) for s in shape.split(","))))
    kwargs = {}
    for fld, caster in (("vocab_size", int), ("d_emb", int), ("channel_dim", int),
                        ("n_blocks", int), ("n_heads", int), ("enc_blocks", int),
                        ("max_len", int), ("ff_mult", int), ("dropout", float),
                        ("seed", int)):
        if fld in cfg_kv:
            kwargs[fld] = caster(cfg_kv[fld])
    model = SemanticRelayModel(ModelConfig(**kwargs))
    model.stage = stage
    params = dict(model.named_parameters())
    off = end
    with torch.no_grad():
        for name, shape in tensors:
            (count,) = struct.unpack_from("<I", blob, off)
            off += 4
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            if name not in params or params[name].shape != torch.Size(shape):
                raise ValueError(f"checkpoint tensor {name} does not match the model")
            params[name].copy_(torch.from_numpy(arr.copy()).view(shape))
    return model
