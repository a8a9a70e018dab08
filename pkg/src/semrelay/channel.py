"""Physical layer: path loss, AWGN / block-Rayleigh fading, power control, SNR.

A token's channel block is carried as D complex uses, represented either as a
complex array of shape (..., D) or as interleaved I/Q reals of shape (..., 2D).
Real blocks may be numpy arrays or torch tensors; gains and noise enter as
constants so autograd flows through the signal path only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FADING_MODES = ("awgn", "rayleigh")
COMPENSATION_MODES = ("transmitter_inversion", "receiver_equalization", "none")


@dataclass
class ChannelParams:
    n0_dbm_hz: float = -174.0
    bandwidth_hz: float = 1e6
    tx_power_dbm: float = 30.0
    path_loss_exp: float = 4.0
    fading: str = "awgn"
    compensation: str = "transmitter_inversion"

    def __post_init__(self):
        if self.fading not in FADING_MODES:
            raise ValueError(f"unknown fading mode {self.fading!r}")
        if self.compensation not in COMPENSATION_MODES:
            raise ValueError(f"unknown compensation mode {self.compensation!r}")
        if self.path_loss_exp <= 0:
            raise ValueError("path loss exponent must be positive")
        if noise_power_watts(self) <= 0:
            raise ValueError("noise power must be positive")


@dataclass
class LinkGeometry:
    d_sd_m: float
    d_sr_m: float

    def __post_init__(self):
        if not 0 < self.d_sr_m < self.d_sd_m:
            raise ValueError(
                f"need 0 < d_SR < d_SD, got d_SR={self.d_sr_m}, d_SD={self.d_sd_m}"
            )

    @property
    def d_rd_m(self) -> float:
        return self.d_sd_m - self.d_sr_m

    @property
    def gamma(self) -> float:
        return self.d_sr_m / self.d_sd_m


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_power_watts(params: ChannelParams) -> float:
    """Total noise power per complex use, sigma_Z^2 = N0 * W in watts."""
    return dbm_to_watts(params.n0_dbm_hz) * params.bandwidth_hz


def snr_db(d_m: float, params: ChannelParams) -> float:
    """Link SNR in dB at distance d (assumes the 1 W transmit constraint)."""
    if d_m <= 0:
        raise ValueError("distance must be positive")
    sigma2 = noise_power_watts(params)
    return -10.0 * math.log10(d_m**params.path_loss_exp * sigma2)


def attenuation_amplitude(d_m: float, params: ChannelParams) -> float:
    """Amplitude gain sqrt(d^-alpha) of the large-scale path loss."""
    if d_m <= 0:
        raise ValueError("distance must be positive")
    return d_m ** (-params.path_loss_exp / 2.0)


def equalize_path_loss(y, d_m: float, params: ChannelParams):
    """Receiver-side division by the known large-scale amplitude.

    Path loss is deterministic given the geometry, so the receiver can always
    undo it; the result is x + z / a, which keeps the SNR unchanged while
    giving the learned decoding layers inputs at the transmit scale.
    """
    return y / attenuation_amplitude(d_m, params)


def sample_fading(rng: np.random.Generator, params: ChannelParams, size=None):
    """Small-scale complex gain, one draw per token block (block fading).

    AWGN mode returns exactly 1; Rayleigh draws CN(0, 1), so E|h|^2 = 1.
    """
    if params.fading == "awgn":
        if size is None:
            return complex(1.0, 0.0)
        return np.ones(size, dtype=np.complex128)
    h = rng.normal(scale=math.sqrt(0.5), size=size) + 1j * rng.normal(
        scale=math.sqrt(0.5), size=size
    )
    return h


def real_to_complex(v: np.ndarray) -> np.ndarray:
    """Interleaved I/Q reals (..., 2D) -> complex (..., D)."""
    v = np.asarray(v)
    if v.shape[-1] % 2:
        raise ValueError("real block length must be even")
    return v[..., 0::2] + 1j * v[..., 1::2]


def complex_to_real(c: np.ndarray) -> np.ndarray:
    """Complex (..., D) -> interleaved I/Q reals (..., 2D). Exact round trip."""
    c = np.asarray(c)
    out = np.empty(c.shape[:-1] + (2 * c.shape[-1],), dtype=np.float64)
    out[..., 0::2] = c.real
    out[..., 1::2] = c.imag
    return out


def _is_torch(x) -> bool:
    return type(x).__module__.partition(".")[0] == "torch"


def apply_power_constraint(v, params: ChannelParams):
    """Scale a real block (..., 2D) so mean power per complex use equals p_T.

    Returns (block, scale). A zero block passes through unscaled (scale 1).
    Scaling is invariant to the input's own amplitude.
    """
    p_t = dbm_to_watts(params.tx_power_dbm)
    if _is_torch(v):
        import torch

        n_uses = v.shape[-1] // 2
        power = (v * v).sum(dim=-1, keepdim=True)
        safe = torch.clamp(power, min=torch.finfo(v.dtype).tiny)
        scale = torch.where(power > 0, (p_t * n_uses / safe).sqrt(), torch.ones_like(power))
        return v * scale, scale
    v = np.asarray(v, dtype=np.float64)
    n_uses = v.shape[-1] // 2
    power = (v * v).sum(axis=-1, keepdims=True)
    scale = np.where(power > 0, np.sqrt(p_t * n_uses / np.where(power > 0, power, 1.0)), 1.0)
    return v * scale, scale


def sample_noise(rng: np.random.Generator, params: ChannelParams, size) -> np.ndarray:
    """Complex AWGN with total variance sigma_Z^2 per use; `size` counts uses."""
    std = math.sqrt(noise_power_watts(params) / 2.0)
    return rng.normal(scale=std, size=size) + 1j * rng.normal(scale=std, size=size)


def _complex_mul_real(v, re, im):
    """Multiply interleaved-real block(s) by per-block complex scalar(s)."""
    vi = v[..., 0::2]
    vq = v[..., 1::2]
    out_i = re * vi - im * vq
    out_q = re * vq + im * vi
    if _is_torch(v):
        import torch

        return torch.stack((out_i, out_q), dim=-1).reshape(v.shape)
    return np.stack((out_i, out_q), axis=-1).reshape(v.shape)


def transmit(x, d_m: float, params: ChannelParams, rng: np.random.Generator,
             return_gain: bool = False):
    """One block through y = h x + z with path loss and compensation.

    `x` is either a complex numpy array (..., D) or an interleaved-real
    numpy array / torch tensor (..., 2D); leading axes are independent blocks,
    each with its own fading draw. With transmitter_inversion the transmitter
    divides by the small-scale gain before the channel; receiver_equalization
    divides the output by it instead; path loss is never compensated.

    When return_gain is True, also returns the effective complex gain(s) the
    receiver sees multiplying the power-normalized x (CSI for the baseline).
    """
    if d_m <= 0:
        raise ValueError("distance must be positive")
    is_torch = _is_torch(x)
    complex_in = (not is_torch) and np.iscomplexobj(x)
    a = attenuation_amplitude(d_m, params)

    if complex_in:
        n_uses = x.shape[-1]
        block_shape = x.shape[:-1]
    else:
        n_uses = x.shape[-1] // 2
        block_shape = x.shape[:-1]

    h = sample_fading(rng, params, size=block_shape if block_shape else None)
    h = np.asarray(h)
    z = sample_noise(rng, params, size=block_shape + (n_uses,))

    if params.compensation == "transmitter_inversion":
        eff = np.full_like(h, a, dtype=np.complex128)  # fading cancelled at TX
        z_eff = z
    elif params.compensation == "receiver_equalization":
        eff = np.full_like(h, a, dtype=np.complex128)
        z_eff = z / h[..., None] if h.ndim else z / h
    else:
        eff = a * h
        z_eff = z

    if complex_in:
        y = x * eff[..., None] if eff.ndim else x * eff
        y = y + z_eff
        return (y, eff) if return_gain else y

    re = eff.real
    im = eff.imag
    z_real = complex_to_real(z_eff)
    if is_torch:
        import torch

        re_t = torch.as_tensor(re, dtype=x.dtype)
        im_t = torch.as_tensor(im, dtype=x.dtype)
        if re_t.ndim:
            re_t = re_t[..., None]
            im_t = im_t[..., None]
        y = _complex_mul_real(x, re_t, im_t) + torch.as_tensor(z_real, dtype=x.dtype)
    else:
        r = re[..., None] if np.ndim(re) else re
        i = im[..., None] if np.ndim(im) else im
        y = _complex_mul_real(np.asarray(x, dtype=np.float64), r, i) + z_real
    return (y, eff) if return_gain else y
