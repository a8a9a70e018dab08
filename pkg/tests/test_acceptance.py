"""Acceptance gate: one test per release criterion, each printing an explicit
pass/fail line (run with -s to see them).

Criterion 8 trains the full toy pipeline from scratch and is by far the
slowest (tens of minutes on a desktop CPU); everything else finishes in a
couple of minutes total.
"""

import math
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from semrelay import baseline as bl
from semrelay import textpipe as tp
from semrelay.channel import (
    ChannelParams,
    LinkGeometry,
    noise_power_watts,
    sample_fading,
    sample_noise,
    snr_db,
)
from semrelay.metrics import EncoderMeanEmbedder, bleu, semantic_similarity
from semrelay.relay import run_episode, run_spf_episode
from semrelay.semnet import ModelConfig, SemanticRelayModel, load_checkpoint, save_checkpoint
from semrelay.training import (
    TrainConfig,
    _step_inputs,
    decode_loop,
    pad_batch,
    sample_geometry,
    train_relay_destination,
    train_semantic_decoder,
    train_source_relay,
)
from semrelay.sweep import sweep_relay_position

CORPUS = "data/sample_corpus.txt"


def report(n, label, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {label}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    return ok


# -----------------------------------------------------------------------------
# 1. gradient correctness on a width-8 model

def _grad_probe_loss(model, ids, mask):
    """Composite pipeline touching every trainable component; all state modes
    are continuous ('input') so finite differences are well defined."""
    steps = ids.shape[1]
    enc = model.semantic_encode(ids)
    sl = enc[:, 1:steps + 1]
    x_s = model.channel_encode(sl, "source")
    x_r = model.channel_encode(sl, "relay")
    v_r = model.channel_decode(x_s * 0.9, "relay")
    v1 = model.channel_decode(x_s * 0.8, "dest_src_branch")
    v2 = model.channel_decode(x_r * 0.7, "dest_relay_branch")
    fused = model.fuse_destination(v1, v2)
    ce_r, n_tok, _ = decode_loop(model, "relay", v_r, ids, mask, "input")
    ce_d, _, _ = decode_loop(model, "destination", fused, ids, mask, "input")
    return (ce_r + ce_d) / (2 * n_tok)


def test_criterion_1_gradient_check():
    t0 = time.time()
    torch.manual_seed(0)
    model = SemanticRelayModel(ModelConfig(vocab_size=16, d_emb=8,
                                           channel_dim=8, n_blocks=1,
                                           n_heads=2, enc_blocks=1,
                                           seed=1)).double()
    ids, mask = pad_batch([[4, 7, 9, 11, 5], [6, 8, 10, 12]])

    loss = _grad_probe_loss(model, ids, mask)
    model.zero_grad(set_to_none=True)
    loss.backward()

    h = 1e-4
    worst = 0.0
    worst_name = ""
    n_checked = 0
    for name, p in model.named_parameters():
        grad = p.grad
        if grad is None:
            grad = torch.zeros_like(p)
        flat = grad.flatten()
        order = torch.argsort(flat.abs(), descending=True)
        picks = order[:2].tolist()
        for idx in picks:
            with torch.no_grad():
                orig = float(p.flatten()[idx])
                p.flatten()[idx] = orig + h
                up = float(_grad_probe_loss(model, ids, mask))
                p.flatten()[idx] = orig - h
                down = float(_grad_probe_loss(model, ids, mask))
                p.flatten()[idx] = orig
            fd = (up - down) / (2 * h)
            an = float(flat[idx])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            n_checked += 1
            if rel > worst:
                worst, worst_name = rel, name
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60
    report(1, "finite-difference gradient check", ok,
           f"worst rel err {worst:.2e} at {worst_name}, "
           f"{n_checked} probes, {elapsed:.0f}s")
    assert worst < 1e-4
    assert elapsed < 60


# -----------------------------------------------------------------------------
# 2. channel statistics

def test_criterion_2_channel_statistics():
    t0 = time.time()
    params = ChannelParams()
    rng = np.random.default_rng(2)
    z = sample_noise(rng, params, size=1_000_000)
    sigma2 = noise_power_watts(params)
    var_err = abs(np.mean(np.abs(z) ** 2) - sigma2) / sigma2

    ray = ChannelParams(fading="rayleigh")
    h = sample_fading(rng, ray, size=1_000_000)
    pow_err = abs(np.mean(np.abs(h) ** 2) - 1.0)

    snr4000 = snr_db(4000.0, params)
    snr1000 = snr_db(1000.0, params)
    ok = (var_err < 0.01 and pow_err < 0.02
          and abs(snr4000 - (-0.0824)) < 0.01
          and abs(snr1000 - 24.0) < 0.01
          and time.time() - t0 < 60)
    report(2, "channel statistics and SNR anchors", ok,
           f"noise var err {var_err:.4f}, E|h|^2 err {pow_err:.4f}, "
           f"SNR(4km)={snr4000:.4f} dB, SNR(1km)={snr1000:.4f} dB")
    assert var_err < 0.01
    assert pow_err < 0.02
    assert abs(snr4000 - (-0.0824)) < 0.01
    assert abs(snr1000 - 24.0) < 0.01
    assert time.time() - t0 < 60


# -----------------------------------------------------------------------------
# 3. FEC round trip and correction capability

def test_criterion_3_fec():
    t0 = time.time()
    rng = np.random.default_rng(3)

    clean_failures = 0
    for t in rng.integers(0, 1 << bl.TOKEN_BITS, size=10_000):
        info = bl.token_to_bits(int(t))
        out, failed = bl.fec_decode(bl.fec_encode(info))
        if failed or not np.array_equal(out, info):
            clean_failures += 1

    corr_failures = 0
    for _ in range(10_000):
        info = bl.token_to_bits(int(rng.integers(0, 1 << bl.TOKEN_BITS)))
        cw = bl.fec_encode(info)
        n_err = int(rng.integers(1, bl.T_CORR + 1))
        pos = rng.choice(bl.N_CODE, size=n_err, replace=False)
        noisy = cw.copy()
        noisy[pos] ^= 1
        out, failed = bl.fec_decode(noisy)
        if failed or not np.array_equal(out, info):
            corr_failures += 1
    elapsed = time.time() - t0
    ok = clean_failures == 0 and corr_failures == 0 and elapsed < 120
    report(3, "FEC round trip and t_corr correction", ok,
           f"clean failures {clean_failures}/10000, "
           f"correction failures {corr_failures}/10000, {elapsed:.0f}s")
    assert clean_failures == 0
    assert corr_failures == 0
    assert elapsed < 120


# -----------------------------------------------------------------------------
# 4. ML fusion oracle equivalence

def _brute_force(y_sd, y_rd, P, g_sd, g_rd, s2):
    best, best_val = 0, -1.0
    for i, xs in enumerate(bl.CONSTELLATION):
        pr_sd = math.exp(-abs(y_sd - g_sd * xs) ** 2 / s2)
        tot = 0.0
        for j, xr in enumerate(bl.CONSTELLATION):
            tot += P.probs[i, j] * math.exp(-abs(y_rd - g_rd * xr) ** 2 / s2)
        val = pr_sd * tot
        if val > best_val:
            best, best_val = i, val
    return best


def test_criterion_4_ml_fusion_oracle():
    t0 = time.time()
    rng = np.random.default_rng(4)
    P = bl.TransitionMatrix(rng.dirichlet(np.ones(4), size=4))
    s2 = 0.5
    mismatches = 0
    for _ in range(1000):
        y_sd = complex(*rng.normal(size=2))
        y_rd = complex(*rng.normal(size=2))
        g_sd = complex(*rng.normal(size=2, scale=0.8))
        g_rd = complex(*rng.normal(size=2, scale=0.8))
        if (bl.ml_fuse(y_sd, y_rd, P, g_sd, g_rd, s2)
                != _brute_force(y_sd, y_rd, P, g_sd, g_rd, s2)):
            mismatches += 1

    uniform = bl.TransitionMatrix(np.full((4, 4), 0.25))
    reduction_fail = 0
    for _ in range(1000):
        y_sd = complex(*rng.normal(size=2))
        y_rd = complex(*rng.normal(size=2))
        g = complex(*rng.normal(size=2))
        direct = int(np.argmin(np.abs(y_sd - g * bl.CONSTELLATION) ** 2))
        if bl.ml_fuse(y_sd, y_rd, uniform, g, 1.0, s2) != direct:
            reduction_fail += 1
    elapsed = time.time() - t0
    ok = mismatches == 0 and reduction_fail == 0 and elapsed < 60
    report(4, "ML fusion matches brute-force objective", ok,
           f"mismatches {mismatches}/1000, "
           f"uniform-reduction failures {reduction_fail}/1000, {elapsed:.0f}s")
    assert mismatches == 0
    assert reduction_fail == 0
    assert elapsed < 60


# -----------------------------------------------------------------------------
# 5. metric units

def test_criterion_5_metric_units():
    t0 = time.time()
    worked = abs(bleu([10, 11, 12], [10, 11, 12, 13], max_n=3)
                 - math.exp(-1.0 / 3.0))
    ident = lambda v: v
    cos_errs = [
        abs(semantic_similarity([1.0, 0.0], [0.0, 1.0], ident) - 0.0),
        abs(semantic_similarity([1.0, 0.0], [1.0, 0.0], ident) - 1.0),
        abs(semantic_similarity([1.0, 0.0], [-1.0, 0.0], ident) + 1.0),
        abs(semantic_similarity([1.0, 1.0], [1.0, 0.0], ident)
            - 1.0 / math.sqrt(2.0)),
    ]

    rng = np.random.default_rng(5)
    bounds_fail = 0
    for _ in range(10_000):
        cand = [int(x) for x in rng.integers(0, 30, size=rng.integers(1, 25))]
        ref = [int(x) for x in rng.integers(0, 30, size=rng.integers(1, 25))]
        b = bleu(cand, ref, max_n=int(rng.integers(1, 5)))
        s = semantic_similarity(rng.normal(size=8), rng.normal(size=8), ident)
        if not (0.0 <= b <= 1.0 and -1.0 - 1e-12 <= s <= 1.0 + 1e-12):
            bounds_fail += 1
    elapsed = time.time() - t0
    ok = (worked < 1e-9 and max(cos_errs) < 1e-9 and bounds_fail == 0
          and elapsed < 60)
    report(5, "metric hand examples and bounds", ok,
           f"BLEU err {worked:.1e}, cosine err {max(cos_errs):.1e}, "
           f"bounds failures {bounds_fail}/10000, {elapsed:.0f}s")
    assert worked < 1e-9
    assert max(cos_errs) < 1e-9
    assert bounds_fail == 0
    assert elapsed < 60


# -----------------------------------------------------------------------------
# 6. overfit sanity

def _shortest_sentences(n):
    lines = tp.preprocess_corpus(tp.read_corpus(CORPUS))
    vocab = tp.build_vocabulary(lines, 512)
    sents = sorted((tp.tokenize(l, vocab) for l in lines), key=len)
    return [s for s in sents if len(s) >= tp.MIN_TOKENS][:n], vocab


def test_criterion_6_overfit():
    t0 = time.time()
    sents, vocab = _shortest_sentences(32)
    cfg = TrainConfig.toy(scheme="slf", epochs=10, batch_size=2,
                          learning_rate=3e-3, seed=3)
    model = SemanticRelayModel(ModelConfig.toy(vocab.size, seed=3))
    train_semantic_decoder(cfg, model, sents)

    ids, mask = pad_batch(sents)
    with torch.no_grad():
        enc = model.semantic_encode(ids)
        inputs = _step_inputs(enc, "slf", ids.shape[1])
        ce_sum, n_tok, decoded = decode_loop(model, "destination", inputs, ids,
                                             mask, "token")
    ce = float(ce_sum) / n_tok
    bleu1 = float(np.mean([
        bleu([t for t, m in zip(row, msk) if m], sent, max_n=1)
        for row, msk, sent in zip(decoded.tolist(), mask.tolist(), sents)]))
    elapsed = time.time() - t0
    ok = ce < 0.1 and bleu1 == 1.0 and elapsed < 600
    report(6, "32-sentence overfit", ok,
           f"CE {ce:.4f}, train BLEU-1 {bleu1:.4f}, {elapsed:.0f}s")
    assert ce < 0.1
    assert bleu1 == 1.0
    assert elapsed < 600


# -----------------------------------------------------------------------------
# 7. protocol accounting

def test_criterion_7_protocol_accounting():
    t0 = time.time()
    model = SemanticRelayModel(ModelConfig(vocab_size=64, d_emb=16,
                                           channel_dim=16, n_blocks=1,
                                           n_heads=2, enc_blocks=1, seed=7))
    params = ChannelParams()
    rng = np.random.default_rng(7)
    slot_errors = 0
    for k in range(500):
        n = int(rng.integers(tp.MIN_TOKENS, tp.MAX_TOKENS + 1))
        sent = [int(x) for x in rng.integers(4, 64, size=n)]
        d_sd = float(rng.uniform(2000, 7000))
        geom = LinkGeometry(d_sd, float(rng.uniform(0.2, 0.8)) * d_sd)
        if run_episode("slf", sent, geom, params, model, k).slot_count != 2 * n:
            slot_errors += 1
        if run_episode("spf", sent, geom, params, model, k).slot_count != n + 1:
            slot_errors += 1

    # SPF causality: perturbing the source signal from slot j on must leave
    # the relay's earlier predictions untouched
    causality_fail = 0
    sent = [5, 9, 14, 22, 7, 31, 12, 44]
    geom = LinkGeometry(4000.0, 2000.0)
    base = run_spf_episode(sent, geom, params, model, seed=77)
    for j in range(1, len(sent)):
        def hook(t, xb, j=j):
            return xb + 25.0 * torch.randn_like(xb) if t >= j else xb

        bumped = run_spf_episode(sent, geom, params, model, seed=77,
                                 source_signal_hook=hook)
        if bumped.relay_tokens[:j] != base.relay_tokens[:j]:
            causality_fail += 1
    elapsed = time.time() - t0
    ok = slot_errors == 0 and causality_fail == 0 and elapsed < 120
    report(7, "slot accounting and SPF causality", ok,
           f"slot errors {slot_errors}/1000 episodes, "
           f"causality failures {causality_fail}/{len(sent) - 1}, {elapsed:.0f}s")
    assert slot_errors == 0
    assert causality_fail == 0
    assert elapsed < 120


# -----------------------------------------------------------------------------
# 8. qualitative reproduction on the toy preset
#
# Pinned regression settings: corpus split seed 11, 512 train / 64 test
# sentences, vocab 512, ModelConfig.toy seed 11, 20 epochs per stage,
# batch 16, sweep seed 101, d_SD = 4000 m, AWGN.

PIN = dict(split_seed=11, vocab_size=512, n_train=512, n_test=64,
           model_seed=11, train_seed=11, epochs=20, batch_size=16,
           sweep_seed=101, d_sd_m=4000.0, gammas=(0.2, 0.35, 0.5, 0.65, 0.8))


def _train_full_pipeline():
    lines = tp.preprocess_corpus(tp.read_corpus(CORPUS))
    vocab = tp.build_vocabulary(lines, PIN["vocab_size"])
    lines = tp.preprocess_corpus(lines, vocab)
    sents = [tp.tokenize(l, vocab) for l in lines]
    split = tp.split_dataset(sents, PIN["split_seed"])
    train = split.train[:PIN["n_train"]]
    test = split.test[:PIN["n_test"]]
    params = ChannelParams()

    models = {}
    for scheme in ("slf", "spf"):
        cfg = TrainConfig.toy(scheme=scheme, epochs=PIN["epochs"],
                              batch_size=PIN["batch_size"],
                              seed=PIN["train_seed"])
        m = SemanticRelayModel(ModelConfig.toy(vocab.size,
                                               seed=PIN["model_seed"]))
        train_semantic_decoder(cfg, m, train)
        train_source_relay(cfg, m, train, params)
        if scheme == "slf":
            # branch the source-only ablation off the shared frozen chain
            import copy

            ablation = copy.deepcopy(m)
            train_relay_destination(cfg, ablation, train, params,
                                    source_only=True)
            models["source_only"] = ablation
        train_relay_destination(cfg, m, train, params)
        models[scheme] = m

    cfg = TrainConfig.toy(scheme="slf", seed=PIN["train_seed"])
    rng = np.random.default_rng(PIN["train_seed"])
    P = bl.calibrate_transitions(train, lambda r: sample_geometry(cfg, r),
                                 params, rng, min_symbols=100_000,
                                 vocab_size=vocab.size)
    models["baseline"] = P
    return models, test, vocab, params


def test_criterion_8_qualitative_reproduction():
    t0 = time.time()
    models, test, vocab, params = _train_full_pipeline()
    embedder = EncoderMeanEmbedder(models["slf"])
    records = sweep_relay_position(models, list(PIN["gammas"]), PIN["d_sd_m"],
                                   params, test, [PIN["sweep_seed"]], embedder,
                                   vocab.size)
    by = {(r.scheme, round(r.gamma, 2)): r for r in records}
    mid = {s: by[(s, 0.5)].bleu3 for s in ("slf", "spf", "source_only",
                                           "baseline")}
    spread = {
        s: (max(by[(s, g)].bleu3 for g in PIN["gammas"])
            - min(by[(s, g)].bleu3 for g in PIN["gammas"]))
        for s in ("slf", "spf", "baseline")
    }
    elapsed = time.time() - t0

    c_base = (mid["slf"] > mid["baseline"]) and (mid["spf"] > mid["baseline"])
    c_abl = (mid["slf"] > mid["source_only"]) and (mid["spf"] > mid["source_only"])
    c_gap = abs(mid["slf"] - mid["spf"]) <= 0.1
    c_flat = spread["slf"] <= 0.05 and spread["spf"] <= 0.05
    c_bspread = spread["baseline"] >= 2.0 * max(spread["slf"], spread["spf"])
    c_time = elapsed < 7200

    detail = (f"BLEU-3 @ gamma=0.5: slf {mid['slf']:.3f}, spf {mid['spf']:.3f}, "
              f"source_only {mid['source_only']:.3f}, "
              f"baseline {mid['baseline']:.3f}; spreads slf {spread['slf']:.3f}, "
              f"spf {spread['spf']:.3f}, baseline {spread['baseline']:.3f}; "
              f"{elapsed:.0f}s")
    report(8, "qualitative ordering at the toy preset",
           c_base and c_abl and c_gap and c_flat and c_bspread and c_time,
           detail)
    print(f"    8a SLF/SPF exceed baseline:        {'PASS' if c_base else 'FAIL'}")
    print(f"    8b SLF/SPF exceed source-only:     {'PASS' if c_abl else 'FAIL'}")
    print(f"    8c |SLF-SPF| <= 0.1:               {'PASS' if c_gap else 'FAIL'}")
    print(f"    8d SLF/SPF gamma spread <= 0.05:   {'PASS' if c_flat else 'FAIL'}")
    print(f"    8e baseline spread >= 2x semantic: {'PASS' if c_bspread else 'FAIL'}")
    print(f"    8f wall clock <= 2 h:              {'PASS' if c_time else 'FAIL'}")
    assert c_base, "SLF/SPF must exceed the conventional baseline"
    assert c_abl, "SLF/SPF must exceed the source-only ablation"
    assert c_gap, "SLF and SPF must be comparable"
    assert c_flat, "SLF/SPF must be flat across relay positions"
    assert c_bspread, "baseline must vary at least twice as much"
    assert c_time
