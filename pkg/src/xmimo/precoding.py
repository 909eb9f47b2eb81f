"""Transmit precoders: wideband eigen (SU), zero-forcing (MU), DFT beam sets.

Precoder columns are always unit norm; layer_power carries the linear power
shares so that || W diag(sqrt(p)) ||_F^2 summed over a co-scheduled UE set
equals 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import Codebook

RANK_TRUNCATION = 1e-9  # singular values below this fraction of the max are dropped
ZF_CONDITION_LIMIT = 1e8


class IllConditionedPairing(Exception):
    """Raised when a stacked MU channel is too ill-conditioned to zero-force."""


@dataclass
class Precoder:
    matrix: np.ndarray  # (n_tx, n_layers), unit-norm columns
    layer_power: np.ndarray  # (n_layers,) linear shares
    beam_ids: np.ndarray | None = None  # codebook indices per layer
    beam_pols: np.ndarray | None = None  # polarization group per layer

    @property
    def n_layers(self) -> int:
        return self.matrix.shape[1]

    def effective(self, total_power: float = 1.0) -> np.ndarray:
        """Columns scaled by their amplitude shares of total_power."""
        return self.matrix * np.sqrt(total_power * self.layer_power)


def wideband_tx_covariance(h_rbs: np.ndarray) -> np.ndarray:
    """RB-averaged transmit-side covariance mean_f H_f^H H_f of (F, n_rx, n_tx)."""
    f = h_rbs.shape[0]
    hs = h_rbs.reshape(-1, h_rbs.shape[-1])
    return (hs.conj().T @ hs) / f


def covariance_eig(cov_tx: np.ndarray, top_k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian covariance, eigenvalues descending.

    top_k restricts the computation to the k largest eigenpairs (enough for
    rank selection and precoding, much cheaper on large port counts).
    """
    n = cov_tx.shape[0]
    if top_k is not None and top_k < n:
        from scipy.linalg import eigh as scipy_eigh

        evals, evecs = scipy_eigh(cov_tx, subset_by_index=(n - top_k, n - 1))
    else:
        evals, evecs = np.linalg.eigh(cov_tx)
    order = np.argsort(evals)[::-1]
    return np.maximum(evals[order], 0.0), evecs[:, order]


def svd_precoder(cov_tx: np.ndarray, n_layers: int,
                 eig: tuple[np.ndarray, np.ndarray] | None = None) -> Precoder:
    """Top eigenvectors of the wideband transmit covariance, equal layer power.

    Rank-deficient covariances are truncated at the numerical rank (singular
    value > 1e-9 of the largest, i.e. eigenvalue > 1e-18 relative). A
    precomputed covariance_eig may be passed to avoid repeating the eigh.
    """
    n_tx = cov_tx.shape[0]
    if not 1 <= n_layers <= n_tx:
        raise ValueError("n_layers must lie in [1, n_tx]")
    evals, evecs = covariance_eig(cov_tx) if eig is None else eig
    sv = np.sqrt(evals)
    keep = int(np.sum(sv > RANK_TRUNCATION * sv[0])) if sv[0] > 0 else 1
    r = min(n_layers, max(keep, 1))
    w = evecs[:, :r]
    return Precoder(matrix=w, layer_power=np.full(r, 1.0 / r))


def select_rank(cov_tx: np.ndarray, noise_power: float, max_rank: int,
                total_power: float = 1.0,
                eig: tuple[np.ndarray, np.ndarray] | None = None) -> int:
    """Rank maximizing sum_i<=r log2(1 + s_i^2 (P/r) / noise); ties -> smaller r."""
    evals = covariance_eig(cov_tx)[0] if eig is None else eig[0]
    max_rank = min(max_rank, cov_tx.shape[0])
    best_r, best_c = 1, -np.inf
    for r in range(1, max_rank + 1):
        c = float(np.sum(np.log2(1.0 + evals[:r] * (total_power / r) / noise_power)))
        if c > best_c + 1e-12:
            best_c, best_r = c, r
    return best_r


def zf_mu_precoder(stacks: list[np.ndarray],
                   cond_limit: float = ZF_CONDITION_LIMIT) -> list[Precoder]:
    """Pseudo-inverse nulling across stacked per-UE effective channels.

    stacks[k] is UE k's (r_k, n_tx) effective channel for one RB group. The
    pinv columns null every other UE's rows exactly; columns are normalized
    to unit norm and the total budget split equally over all layers. Raises
    IllConditionedPairing when the stack's condition number exceeds
    cond_limit (pairing must be rejected, never silently degraded).
    """
    a = np.vstack(stacks)
    n_rows = a.shape[0]
    if n_rows > a.shape[1]:
        raise IllConditionedPairing("more layers than transmit ports")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > cond_limit:
        raise IllConditionedPairing(
            f"stacked channel condition number {sv[0] / max(sv[-1], 1e-300):.3g} exceeds limit")
    w_raw = np.linalg.pinv(a)  # (n_tx, n_rows)
    norms = np.linalg.norm(w_raw, axis=0)
    w = w_raw / norms
    p = np.full(n_rows, 1.0 / n_rows)
    out = []
    row = 0
    for s in stacks:
        r = s.shape[0]
        out.append(Precoder(matrix=w[:, row:row + r], layer_power=p[row:row + r].copy()))
        row += r
    return out


def dft_beam_assignment(cov_tx: np.ndarray, codebook: Codebook,
                        pol_groups: list[np.ndarray], n_layers: int) -> Precoder:
    """Greedy orthogonal-subgroup beam selection maximizing captured energy.

    The orthogonal subgroup containing the single best (beam, polarization)
    candidate is fixed first; beams are then added greedily by beam^H R beam
    on the deflated residual covariance, so later layers capture energy the
    earlier ones left behind. The same spatial beam may be reused on the
    other polarization group.
    """
    n_tx = cov_tx.shape[0]
    sub_beams = codebook.beams[codebook.orthogonal_subgroup(0, 0)].shape[0]
    if n_layers > sub_beams * len(pol_groups):
        raise ValueError("n_layers exceeds orthogonal beams x polarization groups")

    def embed(beam: np.ndarray, group: np.ndarray) -> np.ndarray:
        v = np.zeros(n_tx, dtype=complex)
        v[group] = beam
        return v

    # pick the orthogonal subgroup whose best single beam captures most energy
    best = (-np.inf, 0, 0)
    for r1 in range(codebook.o1):
        for r2 in range(codebook.o2):
            idx = codebook.orthogonal_subgroup(r1, r2)
            for g, group in enumerate(pol_groups):
                b = codebook.beams[idx]
                e = np.real(np.einsum("bi,ij,bj->b", np.conj(b), cov_tx[np.ix_(group, group)], b))
                m = float(np.max(e))
                if m > best[0]:
                    best = (m, r1, r2)
    _, r1, r2 = best
    idx = codebook.orthogonal_subgroup(r1, r2)

    resid = cov_tx.copy()
    chosen: list[tuple[int, int]] = []
    cols = []
    for _ in range(n_layers):
        cand_best = (-np.inf, -1, -1)
        for g, group in enumerate(pol_groups):
            sub = resid[np.ix_(group, group)]
            e = np.real(np.einsum("bi,ij,bj->b", np.conj(codebook.beams[idx]), sub,
                                  codebook.beams[idx]))
            for k_local, bid in enumerate(idx):
                if (int(bid), g) in chosen:
                    continue
                if e[k_local] > cand_best[0]:
                    cand_best = (float(e[k_local]), int(bid), g)
        _, bid, g = cand_best
        chosen.append((bid, g))
        v = embed(codebook.beams[bid], pol_groups[g])
        cols.append(v)
        proj = np.eye(n_tx, dtype=complex) - np.outer(v, np.conj(v))
        resid = proj @ resid @ proj.conj().T

    w = np.stack(cols, axis=1)
    return Precoder(
        matrix=w,
        layer_power=np.full(n_layers, 1.0 / n_layers),
        beam_ids=np.array([b for b, _ in chosen], dtype=int),
        beam_pols=np.array([g for _, g in chosen], dtype=int),
    )
