"""Link abstraction: post-MMSE SINR, capped spectral efficiency, throughput."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Highest 256QAM entry of the public 5G MCS table: 948/1024 code rate x 8 bits
SE_CAP_256QAM = 948.0 / 1024.0 * 8.0  # 7.40625 bps/Hz
SE_ATTENUATION_DB = 2.0  # implementation loss applied inside the SE mapping


@dataclass
class LinkState:
    sinr: np.ndarray  # (n_rb_groups, n_layers) linear
    se: np.ndarray  # (n_rb_groups, n_layers) bps/Hz
    rank: int
    achieved_bits: float = 0.0


def mmse_sinr_cov(a_own: np.ndarray, r_cov: np.ndarray) -> np.ndarray:
    """Per-layer post-MMSE SINR given the own effective channel and R.

    a_own = H W (powers folded), r_cov = noise*I + interference covariance.
    SINR_l = 1 / [(I + A^H R^-1 A)^-1]_ll - 1.
    """
    l = a_own.shape[1]
    rinv_a = np.linalg.solve(r_cov, a_own)
    m = np.eye(l, dtype=complex) + a_own.conj().T @ rinv_a
    e = np.linalg.inv(m)
    d = np.real(np.diag(e))
    return 1.0 / np.maximum(d, 1e-300) - 1.0


def mmse_sinr(h: np.ndarray, w_own: np.ndarray, interferers=(), noise_power: float = 1.0) -> np.ndarray:
    """Per-layer MMSE SINR with explicit interferers.

    interferers is an iterable of (h_i, w_i) pairs: co-scheduled users go
    through the same h, other cells through their own channel to this UE.
    noise_power must be positive so R stays invertible.
    """
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    n_rx = h.shape[0]
    r = noise_power * np.eye(n_rx, dtype=complex)
    for h_i, w_i in interferers:
        b = h_i @ w_i
        r = r + b @ b.conj().T
    return mmse_sinr_cov(h @ w_own, r)


def se_from_sinr(sinr, se_cap: float = SE_CAP_256QAM,
                 attenuation_db: float = SE_ATTENUATION_DB):
    """Shannon SE with implementation loss, clipped at the 256QAM ceiling."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("sinr must be non-negative")
    return np.minimum(np.log2(1.0 + s / 10.0 ** (attenuation_db / 10.0)), se_cap)


def tti_throughput(link: LinkState, rb_group_bw: float, overhead_fraction: float) -> float:
    """Instantaneous rate in bits/s: (1-overhead) * sum_rb sum_layer SE * rb_bw."""
    if not 0.0 <= overhead_fraction < 1.0:
        raise ValueError("overhead_fraction must lie in [0, 1)")
    return float((1.0 - overhead_fraction) * np.sum(link.se) * rb_group_bw)


def noise_power_w(bandwidth_hz: float, noise_figure_db: float,
                  thermal_dbm_hz: float = -174.0) -> float:
    """Receiver noise power in watts over the given bandwidth."""
    dbm = thermal_dbm_hz + 10.0 * np.log10(bandwidth_hz) + noise_figure_db
    return 10.0 ** ((dbm - 30.0) / 10.0)
