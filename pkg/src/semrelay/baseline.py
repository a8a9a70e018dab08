"""Conventional decode-and-forward chain: fixed-length source coding,
binary BCH(255, 21) FEC, QPSK, empirical relay transition calibration and
maximum-likelihood fusion at the destination.

Rate accounting per token: 15 info bits (+6 zero pads inside the code),
255 coded bits + 1 padding bit = 256 transmitted bits = 128 QPSK uses,
matching the learned schemes' 128 complex uses per token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelParams,
    LinkGeometry,
    apply_power_constraint,
    complex_to_real,
    dbm_to_watts,
    noise_power_watts,
    real_to_complex,
    transmit,
)
from .textpipe import UNK

TOKEN_BITS = 15
N_CODE = 255
K_CODE = 21
T_CORR = 55  # documented correction capability of BCH(255, 21)
PAD_BITS = 1
BITS_PER_TOKEN = N_CODE + PAD_BITS  # 256
USES_PER_TOKEN = BITS_PER_TOKEN // 2  # 128

# Fixed constellation order; Gray map 00->(-1,-1), 01->(-1,1), 10->(1,-1), 11->(1,1).
CONSTELLATION = np.array([-1 - 1j, -1 + 1j, 1 - 1j, 1 + 1j]) / math.sqrt(2.0)

# ---------------------------------------------------------------------------
# GF(2^8) arithmetic, primitive polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11D)

_GF_EXP = np.zeros(512, dtype=np.int64)
_GF_LOG = np.zeros(256, dtype=np.int64)
_x = 1
for _i in range(255):
    _GF_EXP[_i] = _x
    _GF_LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= 0x11D
_GF_EXP[255:510] = _GF_EXP[:255]


def _gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(_GF_EXP[_GF_LOG[a] + _GF_LOG[b]])


def _gf_inv(a: int) -> int:
    return int(_GF_EXP[255 - _GF_LOG[a]])


def _min_poly(exponent: int) -> list[int]:
    """Minimal polynomial over GF(2) of alpha^exponent, as a GF(2) coeff list."""
    coset = set()
    e = exponent % 255
    while e not in coset:
        coset.add(e)
        e = (e * 2) % 255
    poly = [1]  # over GF(256); roots alpha^e for e in coset
    for e in sorted(coset):
        root = int(_GF_EXP[e])
        nxt = [0] * (len(poly) + 1)
        for i, c in enumerate(poly):
            nxt[i] ^= _gf_mul(c, root)
            nxt[i + 1] ^= c
        poly = nxt
    assert all(c in (0, 1) for c in poly)
    return poly


def _build_generator() -> np.ndarray:
    """Generator of the narrow-sense binary BCH code with delta = 2*T_CORR + 1."""
    g = [1]
    seen = set()
    for e in range(1, 2 * T_CORR + 1):
        coset = frozenset((e * (1 << i)) % 255 for i in range(8))
        if coset in seen:
            continue
        seen.add(coset)
        m = _min_poly(e)
        out = [0] * (len(g) + len(m) - 1)
        for i, a in enumerate(g):
            if a:
                for j, b in enumerate(m):
                    out[i + j] ^= b
        g = out
    # descending-degree order: index 0 holds the leading coefficient
    return np.array(g[::-1], dtype=np.uint8)


_GENERATOR = _build_generator()  # degree 234 -> k = 21
assert N_CODE - (len(_GENERATOR) - 1) == K_CODE

# Chien/syndrome helper: powers[i, j] = alpha^(i*j) as log-index table is built lazily
_SYND_POW = None


def token_to_bits(token: int) -> np.ndarray:
    """Big-endian 15-bit fixed-length index of a token id."""
    if not 0 <= token < (1 << TOKEN_BITS):
        raise ValueError(f"token {token} does not fit in {TOKEN_BITS} bits")
    return np.array([(token >> (TOKEN_BITS - 1 - i)) & 1 for i in range(TOKEN_BITS)],
                    dtype=np.uint8)


def bits_to_token(bits: np.ndarray, vocab_size: int | None = None) -> int:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (TOKEN_BITS,):
        raise ValueError(f"expected {TOKEN_BITS} bits")
    token = 0
    for b in bits:
        token = (token << 1) | int(b)
    if vocab_size is not None and token >= vocab_size:
        return UNK
    return token


def fec_encode(info_bits: np.ndarray) -> np.ndarray:
    """Systematic BCH(255, 21) codeword for 15 info bits (6 zero pads appended)."""
    info_bits = np.asarray(info_bits, dtype=np.uint8)
    if info_bits.shape != (TOKEN_BITS,):
        raise ValueError(f"expected {TOKEN_BITS} info bits")
    msg = np.zeros(K_CODE, dtype=np.uint8)
    msg[:TOKEN_BITS] = info_bits
    # polynomial long division of msg * x^(n-k) by the generator
    buf = np.zeros(N_CODE, dtype=np.uint8)
    buf[:K_CODE] = msg
    for i in range(K_CODE):
        if buf[i]:
            buf[i:i + len(_GENERATOR)] ^= _GENERATOR
    cw = np.zeros(N_CODE, dtype=np.uint8)
    cw[:K_CODE] = msg
    cw[K_CODE:] = buf[K_CODE:]
    return cw


def _syndromes(received: np.ndarray) -> np.ndarray:
    global _SYND_POW
    if _SYND_POW is None:
        j = np.arange(1, 2 * T_CORR + 1)[:, None]
        i = np.arange(N_CODE)[None, :]
        _SYND_POW = _GF_EXP[(j * i) % 255]
    # codeword bit i multiplies x^(n-1-i): r(x) = sum_i r_i x^(n-1-i)
    pos = np.nonzero(received)[0]
    if len(pos) == 0:
        return np.zeros(2 * T_CORR, dtype=np.int64)
    deg = N_CODE - 1 - pos
    terms = _SYND_POW[:, deg]
    return np.bitwise_xor.reduce(terms, axis=1)


def _berlekamp_massey(S: np.ndarray) -> list[int]:
    C = [1]
    B = [1]
    L = 0
    m = 1
    b = 1
    for n in range(len(S)):
        d = int(S[n])
        for i in range(1, L + 1):
            if i < len(C):
                d ^= _gf_mul(C[i], int(S[n - i]))
        if d == 0:
            m += 1
        elif 2 * L <= n:
            T = C[:]
            coef = _gf_mul(d, _gf_inv(b))
            shifted = [0] * m + [_gf_mul(coef, c) for c in B]
            if len(shifted) > len(C):
                C = C + [0] * (len(shifted) - len(C))
            for i, c in enumerate(shifted):
                C[i] ^= c
            L = n + 1 - L
            B = T
            b = d
            m = 1
        else:
            coef = _gf_mul(d, _gf_inv(b))
            shifted = [0] * m + [_gf_mul(coef, c) for c in B]
            if len(shifted) > len(C):
                C = C + [0] * (len(shifted) - len(C))
            for i, c in enumerate(shifted):
                C[i] ^= c
            m += 1
    return C[:L + 1]


def fec_decode(noisy_bits: np.ndarray) -> tuple[np.ndarray, bool]:
    """Best-estimate 15 info bits plus a decode-failure flag.

    Corrects up to T_CORR arbitrary bit errors; on failure returns the
    received systematic bits unchanged with failed=True.
    """
    noisy_bits = np.asarray(noisy_bits, dtype=np.uint8)
    if noisy_bits.shape != (N_CODE,):
        raise ValueError(f"expected {N_CODE} coded bits")
    S = _syndromes(noisy_bits)
    if not S.any():
        return noisy_bits[:TOKEN_BITS].copy(), False
    sigma = _berlekamp_massey(S)
    n_err = len(sigma) - 1
    if n_err == 0 or n_err > T_CORR:
        return noisy_bits[:TOKEN_BITS].copy(), True
    # Chien search: roots alpha^(-i) locate errors at degree position i
    log_coeffs = np.array([_GF_LOG[c] if c else -1 for c in sigma])
    i_grid = np.arange(N_CODE)
    vals = np.zeros(N_CODE, dtype=np.int64)
    for j, lc in enumerate(log_coeffs):
        if lc < 0:
            continue
        vals ^= _GF_EXP[(lc + (255 - i_grid % 255) * j) % 255]
    err_deg = np.nonzero(vals == 0)[0]
    if len(err_deg) != n_err:
        return noisy_bits[:TOKEN_BITS].copy(), True
    corrected = noisy_bits.copy()
    err_pos = N_CODE - 1 - err_deg
    corrected[err_pos] ^= 1
    if _syndromes(corrected).any():
        return noisy_bits[:TOKEN_BITS].copy(), True
    if corrected[TOKEN_BITS:K_CODE].any():
        # pad bits must decode to zero for a valid token word
        return corrected[:TOKEN_BITS].copy(), True
    return corrected[:TOKEN_BITS].copy(), False


# ---------------------------------------------------------------------------
# QPSK

def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Gray-mapped QPSK at unit average power; 2 bits per complex use."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2:
        raise ValueError("bit count must be even")
    pairs = bits.reshape(-1, 2)
    idx = pairs[:, 0] * 2 + pairs[:, 1]
    return CONSTELLATION[idx]


def qpsk_demodulate_hard(symbols: np.ndarray) -> np.ndarray:
    """Per-axis sign decisions; an exact zero breaks toward bit 1."""
    symbols = np.asarray(symbols)
    out = np.empty((symbols.size, 2), dtype=np.uint8)
    out[:, 0] = (symbols.real >= 0).astype(np.uint8)
    out[:, 1] = (symbols.imag >= 0).astype(np.uint8)
    return out.reshape(-1)


def symbol_indices(bits: np.ndarray) -> np.ndarray:
    pairs = np.asarray(bits, dtype=np.uint8).reshape(-1, 2)
    return pairs[:, 0] * 2 + pairs[:, 1]


# ---------------------------------------------------------------------------
# Transition matrix and ML fusion

@dataclass
class TransitionMatrix:
    probs: np.ndarray  # 4x4 row-stochastic, rows indexed by source symbol

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (4, 4):
            raise ValueError("transition matrix must be 4x4")
        if (self.probs < 0).any():
            raise ValueError("transition probabilities must be non-negative")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("rows must sum to 1")

    def save(self, path: str, header: str = "") -> None:
        with open(path, "w", encoding="utf-8") as f:
            if header:
                for line in header.splitlines():
                    f.write(f"# {line}\n")
            for row in self.probs:
                f.write(" ".join(f"{p:.12e}" for p in row) + "\n")

    @classmethod
    def load(cls, path: str) -> "TransitionMatrix":
        rows = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.startswith("#") or not line.strip():
                    continue
                rows.append([float(x) for x in line.split()])
        return cls(np.array(rows))


def _tx_symbols(token: int, params: ChannelParams) -> tuple[np.ndarray, np.ndarray]:
    """Coded, padded, modulated and power-scaled symbols for one token."""
    cw = fec_encode(token_to_bits(token))
    bits = np.concatenate([cw, np.zeros(PAD_BITS, dtype=np.uint8)])
    sym = qpsk_modulate(bits)
    block, _ = apply_power_constraint(complex_to_real(sym), params)
    return real_to_complex(block), bits


def _relay_process(y_sr: np.ndarray, gain_sr: complex, params: ChannelParams,
                   vocab_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Hard demod, FEC decode, re-encode, re-modulate at the relay."""
    eq = y_sr / gain_sr
    bits_hat = qpsk_demodulate_hard(eq)
    info_hat, _ = fec_decode(bits_hat[:N_CODE])
    token_hat = bits_to_token(info_hat, vocab_size)
    sym, bits = _tx_symbols(token_hat if token_hat < (1 << TOKEN_BITS) else UNK, params)
    return sym, bits


def ml_fuse(y_sd, y_rd, P: TransitionMatrix, gain_sd, gain_rd, noise_var: float):
    """Most likely source symbol index per use, per the two-branch ML rule.

    Maximizes Pr(y_SD | x_S) * sum_xR Pr(x_R | x_S) Pr(y_RD | x_R) with
    complex-Gaussian likelihoods; ties break toward the lowest symbol index.
    Accepts scalars or aligned arrays of received values.
    """
    y_sd = np.asarray(y_sd, dtype=np.complex128)
    y_rd = np.asarray(y_rd, dtype=np.complex128)
    if not (np.isfinite(y_sd).all() and np.isfinite(y_rd).all()):
        raise ValueError("received samples must be finite")
    scalar = y_sd.ndim == 0
    y_sd = np.atleast_1d(y_sd)
    y_rd = np.atleast_1d(y_rd)
    points = CONSTELLATION[None, :]
    d_sd = np.abs(y_sd[:, None] - gain_sd * points) ** 2 / noise_var
    d_rd = np.abs(y_rd[:, None] - gain_rd * points) ** 2 / noise_var
    # stabilized likelihoods; constant factors cancel in the argmax
    lik_sd = np.exp(-(d_sd - d_sd.min(axis=1, keepdims=True)))
    lik_rd = np.exp(-(d_rd - d_rd.min(axis=1, keepdims=True)))
    objective = lik_sd * (lik_rd @ P.probs.T)
    decision = np.argmax(objective, axis=1)
    return int(decision[0]) if scalar else decision


def calibrate_transitions(sentences, geometry_sampler, params: ChannelParams,
                          rng: np.random.Generator, min_symbols: int = 100_000,
                          vocab_size: int | None = None) -> TransitionMatrix:
    """Empirical Pr(relay re-transmitted symbol | source symbol) over the
    source->relay hop, with fresh geometry per sentence.

    `geometry_sampler(rng) -> LinkGeometry` supplies the distance distribution.
    """
    tokens = [t for s in sentences for t in s]
    if not tokens:
        raise ValueError("calibration requires a non-empty token stream")
    counts = np.zeros((4, 4), dtype=np.float64)
    n = 0
    k = 0
    while n < min_symbols:
        geom = geometry_sampler(rng)
        token = tokens[k % len(tokens)]
        k += 1
        sym, bits = _tx_symbols(token, params)
        y, gain = transmit(sym, geom.d_sr_m, params, rng, return_gain=True)
        relay_sym, relay_bits = _relay_process(y, complex(np.asarray(gain).reshape(())), params,
                                               vocab_size)
        src_idx = symbol_indices(bits)
        rel_idx = symbol_indices(relay_bits)
        np.add.at(counts, (src_idx, rel_idx), 1.0)
        n += len(src_idx)
    rows = counts.sum(axis=1, keepdims=True)
    rows[rows == 0] = 1.0
    return TransitionMatrix(counts / rows)


def run_baseline_episode(sentence, geometry: LinkGeometry, params: ChannelParams,
                         P: TransitionMatrix, rng: np.random.Generator,
                         vocab_size: int | None = None) -> list[int]:
    """Decode-and-forward transmission of one sentence; returns decoded ids."""
    sigma2 = noise_power_watts(params)
    amp = math.sqrt(dbm_to_watts(params.tx_power_dbm))  # scale applied at TX
    decoded = []
    for token in sentence:
        sym, _ = _tx_symbols(token, params)
        y_sr, g_sr = transmit(sym, geometry.d_sr_m, params, rng, return_gain=True)
        y_sd, g_sd = transmit(sym, geometry.d_sd_m, params, rng, return_gain=True)
        relay_sym, _ = _relay_process(y_sr, complex(np.asarray(g_sr).reshape(())), params,
                                      vocab_size)
        y_rd, g_rd = transmit(relay_sym, geometry.d_rd_m, params, rng, return_gain=True)
        fused_idx = ml_fuse(y_sd, y_rd, P,
                            amp * complex(np.asarray(g_sd).reshape(())),
                            amp * complex(np.asarray(g_rd).reshape(())), sigma2)
        bits = np.stack([(fused_idx >> 1) & 1, fused_idx & 1], axis=1).reshape(-1)
        info, _ = fec_decode(bits[:N_CODE].astype(np.uint8))
        decoded.append(bits_to_token(info, vocab_size))
    return decoded
