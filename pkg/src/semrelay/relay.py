"""End-to-end SLF / SPF / source-only episodes over the three-node network.

SLF uses two orthogonal resources per token (source slot + relay forward
slot, 2T in total); SPF uses T+1 slots: a point-to-point [CLS] bootstrap at
slot 0, then combined broadcast + orthogonal-MAC slots 1..T, the last one
point-to-point source-to-destination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .channel import (ChannelParams, LinkGeometry, apply_power_constraint,
                      equalize_path_loss, transmit)
from .semnet import SemanticRelayModel, greedy_token, update_state


@dataclass
class SlotRecord:
    index: int
    links: tuple[str, ...]
    source_index: int | None = None  # embedding index carried by the source
    relay_token: int | None = None   # token the relay transmitted this slot
    dest_token: int | None = None    # token the destination emitted this slot


@dataclass
class EpisodeTrace:
    scheme: str
    geometry: LinkGeometry
    seed: int
    slots: list[SlotRecord] = field(default_factory=list)
    relay_tokens: list[int] = field(default_factory=list)
    dest_tokens: list[int] = field(default_factory=list)

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    def to_text(self) -> str:
        lines = [f"scheme {self.scheme} d_sd {self.geometry.d_sd_m:.3f} "
                 f"d_sr {self.geometry.d_sr_m:.3f} seed {self.seed}"]
        for s in self.slots:
            lines.append(
                f"slot {s.index} links {'+'.join(s.links) or 'silent'} "
                f"src_idx {s.source_index} relay_tok {s.relay_token} "
                f"dest_tok {s.dest_token}")
        return "\n".join(lines) + "\n"


def _encode_source_block(model, vec, params):
    x = model.channel_encode(vec, "source")
    xb, _ = apply_power_constraint(x, params)
    return xb


def _relay_reencode_block(model, relay_tokens, params):
    """Causal re-encoding of the relay's running sentence; last position."""
    prefix = torch.tensor([relay_tokens], dtype=torch.long)
    renc = model.semantic_encode(prefix, causal=True)[:, len(relay_tokens)]
    x = model.channel_encode(renc, "relay")
    xb, _ = apply_power_constraint(x, params)
    return xb


def _dest_step(model, y_s1, y_r, state):
    v1 = model.channel_decode(y_s1, "dest_src_branch")
    v2 = model.channel_decode(y_r, "dest_relay_branch")
    fused = model.fuse_destination(v1, v2)
    logits = model.semantic_decode_step(fused, state, "destination")
    token = greedy_token(logits[0])
    state = update_state(state, token,
                         model.dest_decoder.token_embedding(
                             torch.tensor([token])))
    return token, state


@torch.no_grad()
def run_slf_episode(sentence, geometry: LinkGeometry, params: ChannelParams,
                    model: SemanticRelayModel, seed: int,
                    source_signal_hook=None) -> EpisodeTrace:
    """Decode/re-encode/forward at the relay; 2T slots on orthogonal resources."""
    rng = np.random.default_rng(seed)
    ids = torch.tensor([list(sentence)], dtype=torch.long)
    enc = model.semantic_encode(ids)
    trace = EpisodeTrace("slf", geometry, seed)
    state_r = model.new_state()
    state_d = model.new_state()
    t_len = len(sentence)
    for t in range(1, t_len + 1):
        xb = _encode_source_block(model, enc[:, t], params)
        if source_signal_hook is not None:
            xb = source_signal_hook(t, xb)
        y_s2 = equalize_path_loss(transmit(xb, geometry.d_sr_m, params, rng),
                                geometry.d_sr_m, params)
        y_s1 = equalize_path_loss(transmit(xb, geometry.d_sd_m, params, rng),
                                geometry.d_sd_m, params)

        v = model.channel_decode(y_s2, "relay")
        logits = model.semantic_decode_step(v, state_r, "relay")
        w_r = greedy_token(logits[0])
        state_r = update_state(state_r, w_r,
                               model.relay_decoder.token_embedding(
                                   torch.tensor([w_r])))
        trace.relay_tokens.append(w_r)
        trace.slots.append(SlotRecord(2 * t - 2, ("S->R", "S->D"), source_index=t))

        xb_r = _relay_reencode_block(model, trace.relay_tokens, params)
        y_r = equalize_path_loss(transmit(xb_r, geometry.d_rd_m, params, rng),
                                geometry.d_rd_m, params)
        w_d, state_d = _dest_step(model, y_s1, y_r, state_d)
        trace.dest_tokens.append(w_d)
        trace.slots.append(SlotRecord(2 * t - 1, ("R->D",), relay_token=w_r,
                                      dest_token=w_d))
    return trace


@torch.no_grad()
def run_spf_episode(sentence, geometry: LinkGeometry, params: ChannelParams,
                    model: SemanticRelayModel, seed: int,
                    source_signal_hook=None) -> EpisodeTrace:
    """Predict-and-forward: T+1 slots, prediction concurrent with broadcast."""
    rng = np.random.default_rng(seed)
    ids = torch.tensor([list(sentence)], dtype=torch.long)
    enc = model.semantic_encode(ids)
    trace = EpisodeTrace("spf", geometry, seed)
    state_r = model.new_state()
    state_d = model.new_state()
    t_len = len(sentence)

    # slot 0: [CLS] bootstrap, source -> relay point-to-point
    xb = _encode_source_block(model, enc[:, 0], params)
    if source_signal_hook is not None:
        xb = source_signal_hook(0, xb)
    y_s2 = equalize_path_loss(transmit(xb, geometry.d_sr_m, params, rng),
                                geometry.d_sr_m, params)
    v = model.channel_decode(y_s2, "relay")
    logits = model.semantic_decode_step(v, state_r, "relay")
    pred = greedy_token(logits[0])
    state_r = update_state(state_r, pred, v)
    trace.relay_tokens.append(pred)
    trace.slots.append(SlotRecord(0, ("S->R",), source_index=0))

    for t in range(1, t_len + 1):
        xb = _encode_source_block(model, enc[:, t], params)
        if source_signal_hook is not None:
            xb = source_signal_hook(t, xb)
        links = ["S->D", "R->D"] if t == t_len else ["S->R", "S->D", "R->D"]
        y_s1 = equalize_path_loss(transmit(xb, geometry.d_sd_m, params, rng),
                                geometry.d_sd_m, params)

        # relay forwards its standing prediction of token t on the MAC resource
        xb_r = _relay_reencode_block(model, trace.relay_tokens[:t], params)
        y_r = equalize_path_loss(transmit(xb_r, geometry.d_rd_m, params, rng),
                                geometry.d_rd_m, params)
        w_d, state_d = _dest_step(model, y_s1, y_r, state_d)
        trace.dest_tokens.append(w_d)

        if t < t_len:
            # relay hears the broadcast and predicts the next token
            y_s2 = equalize_path_loss(transmit(xb, geometry.d_sr_m, params, rng),
                                geometry.d_sr_m, params)
            v = model.channel_decode(y_s2, "relay")
            logits = model.semantic_decode_step(v, state_r, "relay")
            pred = greedy_token(logits[0])
            state_r = update_state(state_r, pred, v)
            trace.relay_tokens.append(pred)
        trace.slots.append(SlotRecord(t, tuple(links), source_index=t,
                                      relay_token=trace.relay_tokens[t - 1],
                                      dest_token=w_d))
    return trace


@torch.no_grad()
def run_source_only_episode(sentence, geometry: LinkGeometry, params: ChannelParams,
                            model: SemanticRelayModel, seed: int) -> EpisodeTrace:
    """SLF timing with the relay branch zeroed; relay slots stay silent."""
    rng = np.random.default_rng(seed)
    ids = torch.tensor([list(sentence)], dtype=torch.long)
    enc = model.semantic_encode(ids)
    trace = EpisodeTrace("source_only", geometry, seed)
    state_d = model.new_state()
    for t in range(1, len(sentence) + 1):
        xb = _encode_source_block(model, enc[:, t], params)
        y_s2 = equalize_path_loss(transmit(xb, geometry.d_sr_m, params, rng),
                                geometry.d_sr_m, params)  # relay stays silent
        y_s1 = equalize_path_loss(transmit(xb, geometry.d_sd_m, params, rng),
                                geometry.d_sd_m, params)
        trace.slots.append(SlotRecord(2 * t - 2, ("S->R", "S->D"), source_index=t))
        y_r = torch.zeros_like(y_s1)
        w_d, state_d = _dest_step(model, y_s1, y_r, state_d)
        trace.dest_tokens.append(w_d)
        trace.slots.append(SlotRecord(2 * t - 1, (), dest_token=w_d))
    return trace


def run_episode(scheme: str, sentence, geometry, params, model, seed) -> EpisodeTrace:
    fn = {"slf": run_slf_episode, "spf": run_spf_episode,
          "source_only": run_source_only_episode}.get(scheme)
    if fn is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    return fn(sentence, geometry, params, model, seed)
