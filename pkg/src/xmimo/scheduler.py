"""Per-TTI proportional-fair scheduling with SU rank adaptation and greedy MU pairing.

Channels are static within a drop (no mobility), so each UE's realized rates
are precomputed by the campaign layer and the TTI loop reduces to PF
bookkeeping plus, in MU mode, the greedy pairing search. PF averages use
exponential forgetting with a configurable window; ties break toward the
lowest UE id for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .link import se_from_sinr, SE_CAP_256QAM, SE_ATTENUATION_DB
from .precoding import Precoder, ZF_CONDITION_LIMIT

PF_BOOTSTRAP_EPS = 1e-6


def pf_metric(instantaneous_rate, average_rate, fairness_exponent: float = 1.0):
    """Proportional-fair score: instantaneous / average**exponent."""
    avg = np.asarray(average_rate, dtype=float)
    if np.any(avg <= 0):
        raise ValueError("average_rate must be positive (bootstrap with epsilon)")
    return np.asarray(instantaneous_rate, dtype=float) / avg ** fairness_exponent


@dataclass
class MuCandidate:
    ue_id: int
    eff_rows: np.ndarray  # (r, n_tx) wideband effective channel rows
    noise: np.ndarray  # (r,) post-combiner noise+interference power per row
    weight: float  # PF weight multiplying this UE's rate in the objective
    gram_rows: np.ndarray | None = None  # row indices into a shared candidate Gram


@dataclass
class MuPairing:
    ue_ids: list[int]
    ranks: list[int]
    sinr: list[np.ndarray]  # per UE, per-layer wideband SINR under ZF
    rates: list[float]  # per UE, bits/s
    precoders: list[Precoder]
    objective_trace: list[float]  # objective after each accepted addition


def _zf_eval(rows: np.ndarray, noise: np.ndarray, total_power: float,
             cond_limit: float, se_cap: float, se_att: float):
    """Wideband ZF evaluation of one stacked candidate set.

    Returns (sinr_per_row, gram) or None when the stack is flagged
    ill-conditioned. SINR_l = P/L / ([G^-1]_ll * noise_l) with G = A A^H.
    """
    g = rows @ rows.conj().T
    ev = np.linalg.eigvalsh(g)
    if ev[0] <= 0.0 or ev[-1] / ev[0] > cond_limit ** 2:
        return None
    ginv_diag = np.real(np.diag(np.linalg.inv(g)))
    n_l = rows.shape[0]
    sinr = (total_power / n_l) / (ginv_diag * noise)
    return sinr, g


def greedy_mu_pairing(candidates: list[MuCandidate], total_power: float,
                      max_paired: int, rate_scale: float = 1.0,
                      se_cap: float = SE_CAP_256QAM, se_att: float = SE_ATTENUATION_DB,
                      cond_limit: float = ZF_CONDITION_LIMIT,
                      gram: np.ndarray | None = None,
                      eval_cache: dict | None = None) -> MuPairing:
    """Greedy weighted-sum-rate pairing under zero-forcing re-computation.

    candidates must be sorted by PF score descending; the top one seeds the
    set. Each round re-evaluates ZF for every remaining candidate and adds
    the best one iff it strictly increases the weighted objective;
    ill-conditioned stacks are rejected, which folds into the stopping rule.

    gram may hold a precomputed A_all A_all^H over every candidate's rows
    (candidates then carry gram_rows); eval_cache memoizes per-set rates,
    which are invariant across TTIs for static channels (PF weights only
    rescale the objective).
    """
    if not candidates:
        raise ValueError("need at least one candidate")

    def zf_rates(sel: list[MuCandidate]):
        key = tuple(c.ue_id for c in sel)  # order matters: rows follow it
        if eval_cache is not None and key in eval_cache:
            return eval_cache[key]
        noise = np.concatenate([c.noise for c in sel])
        if gram is not None and all(c.gram_rows is not None for c in sel):
            idx = np.concatenate([c.gram_rows for c in sel])
            g = gram[np.ix_(idx, idx)]
            ev = np.linalg.eigvalsh(g)
            if ev[0] <= 0.0 or ev[-1] / ev[0] > cond_limit ** 2:
                sinr = None
            else:
                ginv_diag = np.real(np.diag(np.linalg.inv(g)))
                n_l = len(idx)
                sinr = (total_power / n_l) / (ginv_diag * noise)
        else:
            rows = np.vstack([c.eff_rows for c in sel])
            out = _zf_eval(rows, noise, total_power, cond_limit, se_cap, se_att)
            sinr = None if out is None else out[0]
        if sinr is None:
            res = None
        else:
            se = se_from_sinr(sinr, se_cap, se_att)
            rates, r0 = [], 0
            for c in sel:
                r = c.eff_rows.shape[0]
                rates.append(rate_scale * float(np.sum(se[r0:r0 + r])))
                r0 += r
            res = (sinr, rates)
        if eval_cache is not None:
            eval_cache[key] = res
        return res

    def evaluate(sel: list[MuCandidate]):
        res = zf_rates(sel)
        if res is None:
            return None
        sinr, rates = res
        obj = sum(c.weight * r for c, r in zip(sel, rates))
        return obj, rates, sinr

    selected = [candidates[0]]
    current = evaluate(selected)
    assert current is not None, "single top-PF candidate must be schedulable"
    trace = [current[0]]
    remaining = list(candidates[1:])
    while len(selected) < max_paired and remaining:
        best = None
        for i, cand in enumerate(remaining):
            res = evaluate(selected + [cand])
            if res is None:
                continue
            if best is None or res[0] > best[1][0]:
                best = (i, res)
        if best is None or best[1][0] <= current[0]:
            break
        i, current = best
        selected.append(remaining.pop(i))
        trace.append(current[0])

    obj, rates, sinr = current
    # final ZF precoders from the wideband stack (unit-norm pinv columns)
    rows = np.vstack([c.eff_rows for c in selected])
    w_raw = np.linalg.pinv(rows)
    w = w_raw / np.linalg.norm(w_raw, axis=0)
    n_l = rows.shape[0]
    precoders, sinrs, r0 = [], [], 0
    for c in selected:
        r = c.eff_rows.shape[0]
        precoders.append(Precoder(matrix=w[:, r0:r0 + r],
                                  layer_power=np.full(r, 1.0 / n_l)))
        sinrs.append(sinr[r0:r0 + r].copy())
        r0 += r
    return MuPairing(ue_ids=[c.ue_id for c in selected],
                     ranks=[c.eff_rows.shape[0] for c in selected],
                     sinr=sinrs, rates=rates, precoders=precoders,
                     objective_trace=trace)


@dataclass
class ScheduleDecision:
    tti: int
    cell_id: int
    ue_ids: list[int]
    ranks: list[int]
    precoders: list[Precoder]
    sinr: list[np.ndarray]  # per UE, per-layer (wideband mean) linear SINR
    rates_bps: list[float]
    pf_metrics: dict[int, float]  # PF score of each candidate at decision time

    @property
    def total_layers(self) -> int:
        return int(sum(self.ranks))


@dataclass
class CellState:
    """Per-cell scheduler state for one drop; realized rates are static."""

    cell_id: int
    ue_ids: np.ndarray  # sorted ascending
    su_rates: np.ndarray  # (n,) realized bits/s if scheduled alone
    su_ranks: np.ndarray  # (n,)
    su_sinr: list[np.ndarray]  # per UE per-layer wideband-mean SINR
    su_precoders: list[Precoder]
    mu_eff_rows: list[np.ndarray] | None = None  # wideband (r, n_tx) per UE
    mu_noise: list[np.ndarray] | None = None  # (r,) per UE
    mu_rbg_eff: list[np.ndarray] | None = None  # (F, r, n_tx) per UE
    pf_window: int = 100
    pf_exponent: float = 1.0
    pf_avg: np.ndarray = field(default=None)  # type: ignore[assignment]
    # static-channel caches: candidate-row Gram, per-set wideband SINR,
    # per-set realized per-RBG rates
    mu_gram: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    mu_gram_rows: list[np.ndarray] = field(default=None, repr=False)  # type: ignore[assignment]
    mu_eval_cache: dict = field(default_factory=dict, repr=False)
    mu_realized_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.pf_avg is None:
            self.pf_avg = np.maximum(self.su_rates, 1.0) * PF_BOOTSTRAP_EPS
        if self.mu_eff_rows is not None and self.mu_gram is None:
            rows = np.vstack(self.mu_eff_rows)
            self.mu_gram = rows @ rows.conj().T
            splits, r0 = [], 0
            for e in self.mu_eff_rows:
                splits.append(np.arange(r0, r0 + e.shape[0]))
                r0 += e.shape[0]
            self.mu_gram_rows = splits

    @property
    def n_ues(self) -> int:
        return len(self.ue_ids)

    def pf_update(self, rates_by_idx: dict[int, float]) -> None:
        beta = 1.0 / self.pf_window
        inst = np.zeros(self.n_ues)
        for i, r in rates_by_idx.items():
            inst[i] = r
        self.pf_avg = (1.0 - beta) * self.pf_avg + beta * inst
        np.maximum(self.pf_avg, PF_BOOTSTRAP_EPS, out=self.pf_avg)


@dataclass(frozen=True)
class TtiParams:
    total_power_rbg: float  # watts per RB group
    rb_group_bw: float
    n_rb_groups: int
    overhead: float
    se_cap: float = SE_CAP_256QAM
    se_att: float = SE_ATTENUATION_DB
    max_paired: int = 8
    max_total_layers_mu: int = 16
    max_total_layers_su: int = 8
    cond_limit: float = ZF_CONDITION_LIMIT


def run_tti(cell: CellState, mode: str, tti: int, params: TtiParams) -> ScheduleDecision:
    """Schedule one TTI for one cell and update the PF averages."""
    scores = pf_metric(cell.su_rates, cell.pf_avg, cell.pf_exponent)
    pf_map = {int(u): float(s) for u, s in zip(cell.ue_ids, scores)}
    if mode == "su":
        i = int(np.argmax(scores))  # argmax takes the first (lowest id) on ties
        rate = float(cell.su_rates[i])
        decision = ScheduleDecision(
            tti=tti, cell_id=cell.cell_id, ue_ids=[int(cell.ue_ids[i])],
            ranks=[int(cell.su_ranks[i])], precoders=[cell.su_precoders[i]],
            sinr=[cell.su_sinr[i]], rates_bps=[rate], pf_metrics=pf_map,
        )
        assert decision.total_layers <= params.max_total_layers_su
        cell.pf_update({i: rate})
        return decision
    if mode != "mu":
        raise ValueError(f"unknown scheduling mode '{mode}'")

    order = sorted(range(cell.n_ues), key=lambda i: (-scores[i], cell.ue_ids[i]))
    weights = 1.0 / cell.pf_avg ** cell.pf_exponent
    cands = [MuCandidate(ue_id=int(cell.ue_ids[i]), eff_rows=cell.mu_eff_rows[i],
                         noise=cell.mu_noise[i], weight=float(weights[i]),
                         gram_rows=cell.mu_gram_rows[i])
             for i in order]
    rate_scale = (1.0 - params.overhead) * params.rb_group_bw * params.n_rb_groups
    max_paired = min(params.max_paired, params.max_total_layers_mu // 2)
    pairing = greedy_mu_pairing(cands, params.total_power_rbg, max_paired,
                                rate_scale=rate_scale, se_cap=params.se_cap,
                                se_att=params.se_att, cond_limit=params.cond_limit,
                                gram=cell.mu_gram, eval_cache=cell.mu_eval_cache)

    # realized per-RB-group ZF for the chosen set (memoized: channels are static)
    idx_of = {int(u): i for i, u in enumerate(cell.ue_ids)}
    sel_idx = [idx_of[u] for u in pairing.ue_ids]
    set_key = tuple(pairing.ue_ids)
    cached = cell.mu_realized_cache.get(set_key)
    if cached is None:
        stack = np.concatenate([cell.mu_rbg_eff[i] for i in sel_idx], axis=1)  # (F, L, n_tx)
        noise = np.concatenate([cell.mu_noise[i] for i in sel_idx])
        n_l = stack.shape[1]
        g = stack @ stack.conj().transpose(0, 2, 1)  # (F, L, L)
        try:
            ginv_diag = np.real(np.diagonal(np.linalg.inv(g), axis1=1, axis2=2))
        except np.linalg.LinAlgError:
            ginv_diag = np.real(np.diagonal(np.linalg.pinv(g), axis1=1, axis2=2))
        sinr_f = (params.total_power_rbg / n_l) / (ginv_diag * noise[None, :])  # (F, L)
        se = se_from_sinr(np.maximum(sinr_f, 0.0), params.se_cap, params.se_att)
        rates_c, sinr_c, r0 = [], [], 0
        for i in sel_idx:
            r = cell.mu_eff_rows[i].shape[0]
            rate = float((1.0 - params.overhead) * np.sum(se[:, r0:r0 + r]) * params.rb_group_bw)
            rates_c.append(rate)
            sinr_c.append(np.mean(sinr_f[:, r0:r0 + r], axis=0))
            r0 += r
        cached = (rates_c, sinr_c)
        cell.mu_realized_cache[set_key] = cached
    rates, sinr_rec = list(cached[0]), list(cached[1])
    rates_by_idx = {i: r for i, r in zip(sel_idx, rates)}
    decision = ScheduleDecision(
        tti=tti, cell_id=cell.cell_id, ue_ids=list(pairing.ue_ids),
        ranks=list(pairing.ranks), precoders=pairing.precoders,
        sinr=sinr_rec, rates_bps=rates, pf_metrics=pf_map,
    )
    assert decision.total_layers <= params.max_total_layers_mu
    cell.pf_update(rates_by_idx)
    return decision
