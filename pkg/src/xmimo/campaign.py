"""End-to-end experiment orchestration: drops x TTIs -> ThroughputReport.

A campaign realizes n_drops independent network drops. Within one drop the
channels are static (no mobility), so each UE's realized link quality is
computed once: serving-link per-RB-group matrices plus a wideband
inter-cell interference covariance accumulated from every other cell under
an expected (isotropic over transmit ports) neighbor precoder at full power
(full buffer: every cell always transmits). The TTI loop then reduces to PF
scheduling over those precomputed rates.

Drops run as independent work units (process pool); aggregation is a
fixed-order reduction over drop indices so reports are bit-reproducible
under any worker count.
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .arrays import ArrayConfig, ArrayGeometry, array_preset, build_array
from .channel import (Cell, ChannelParams, NetworkLayout, UEDrop, bearing_to_cell,
                      channel_matrix, drop_ues, generate_clusters, link_geometry,
                      los_probability, pathloss, substream, wideband_rx_covariance)
from .formats import config_hash, fmt, write_csv, write_json, write_json_atomic
from .link import SE_CAP_256QAM, noise_power_w, se_from_sinr
from .precoding import (Precoder, covariance_eig, select_rank, svd_precoder,
                        wideband_tx_covariance)
from .scheduler import CellState, ScheduleDecision, TtiParams, run_tti

TTI_SECONDS = 1e-3
MU_RANK_MIN_EIG = 1e-6  # combiner rows below this fraction of the top eigenvalue are dropped


class ConfigError(ValueError):
    """Invalid campaign configuration; field carries the offending key path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"config field '{field_path}': {message}")


@dataclass(frozen=True)
class CampaignConfig:
    scenario: str
    seed: int
    mode: str = "su"
    layout: NetworkLayout = field(default_factory=NetworkLayout)
    bs_array: str = "x256"
    ue_array: str = "ue4"
    ues_per_cell: int = 10
    n_drops: int = 1
    ttis_per_drop: int = 1000
    warmup_ttis: int = 200
    bandwidth_hz: float = 100e6
    carrier_hz: float = 7.125e9
    n_rb_groups: int = 50
    tx_power_dbm: float = 55.0
    noise_figure_db: float = 9.0
    overhead: float = 0.14
    max_rank_su: int = 8
    mu_rank_per_ue: int = 2
    mu_max_paired: int = 8
    pf_window_ttis: int = 100
    pf_exponent: float = 1.0
    se_cap: float = SE_CAP_256QAM
    se_attenuation_db: float = 2.0
    channel: ChannelParams = field(default_factory=ChannelParams)
    decision_log: bool = False

    @property
    def rb_group_bw(self) -> float:
        return self.bandwidth_hz / self.n_rb_groups

    def validate(self) -> None:
        if self.mode not in ("su", "mu"):
            raise ConfigError("mode", f"must be 'su' or 'mu', got {self.mode!r}")
        if self.n_drops < 1:
            raise ConfigError("n_drops", "must be >= 1")
        if self.ues_per_cell < 1:
            raise ConfigError("ues_per_cell", "must be >= 1")
        if not 0 <= self.warmup_ttis < self.ttis_per_drop:
            raise ConfigError("warmup_ttis", "must satisfy 0 <= warmup < ttis_per_drop")
        if not 0.0 <= self.overhead < 1.0:
            raise ConfigError("overhead", "must lie in [0, 1)")
        if self.n_rb_groups < 1 or self.bandwidth_hz <= 0:
            raise ConfigError("n_rb_groups", "bandwidth and RB-group count must be positive")
        from .arrays import ARRAY_PRESETS
        for key, name in (("bs_array", self.bs_array), ("ue_array", self.ue_array)):
            if name not in ARRAY_PRESETS:
                raise ConfigError(key, f"unknown array preset {name!r}")
        try:
            self.layout.validate()
        except ValueError as e:
            raise ConfigError("layout", str(e)) from None
        try:
            self.channel.validate()
        except ValueError as e:
            raise ConfigError("channel", str(e)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


_NESTED_FIELDS = {"layout": NetworkLayout, "channel": ChannelParams}


def config_from_dict(d: dict) -> CampaignConfig:
    """Build and validate a CampaignConfig; errors name the offending field."""
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {f.name for f in dataclasses.fields(CampaignConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(key, "unknown config key")
    if "scenario" not in d:
        raise ConfigError("scenario", "required")
    if "seed" not in d:
        raise ConfigError("seed", "required (seeds are mandatory for reproducibility)")
    kwargs = dict(d)
    for name, cls in _NESTED_FIELDS.items():
        if name in kwargs:
            sub = kwargs[name]
            if not isinstance(sub, dict):
                raise ConfigError(name, "must be an object")
            subknown = {f.name for f in dataclasses.fields(cls)}
            for key in sub:
                if key not in subknown:
                    raise ConfigError(f"{name}.{key}", "unknown config key")
            try:
                kwargs[name] = cls(**sub)
            except (TypeError, ValueError) as e:
                raise ConfigError(name, str(e)) from None
    try:
        cfg = CampaignConfig(**kwargs)
    except TypeError as e:
        raise ConfigError("<root>", str(e)) from None
    cfg.validate()
    return cfg


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply key=value items with dotted paths onto a config dict."""
    import json as _json

    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}
    known = {f.name for f in dataclasses.fields(CampaignConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, _, val = item.partition("=")
        key = key.strip()
        try:
            parsed = _json.loads(val)
        except _json.JSONDecodeError:
            parsed = val
        parts = key.split(".")
        if parts[0] not in known:
            raise ConfigError(key, "unknown config key")
        if len(parts) == 1:
            out[parts[0]] = parsed
        elif len(parts) == 2 and parts[0] in _NESTED_FIELDS:
            subknown = {f.name for f in dataclasses.fields(_NESTED_FIELDS[parts[0]])}
            if parts[1] not in subknown:
                raise ConfigError(key, "unknown config key")
            out.setdefault(parts[0], {})
            out[parts[0]][parts[1]] = parsed
        else:
            raise ConfigError(key, "unknown config key")
    return out


# ----------------------------------------------------------------------------
# drop realization


@dataclass
class UELink:
    """Realized serving link and scheduler inputs for one dropped UE."""

    ue_idx: int
    serving_cell: int
    su_rate_bps: float
    su_rank: int
    su_sinr: np.ndarray  # per-layer wideband-mean SINR
    su_precoder: Precoder
    mu_eff_rows: np.ndarray | None = None
    mu_noise: np.ndarray | None = None
    mu_rbg_eff: np.ndarray | None = None


@dataclass
class DropResult:
    drop_idx: int
    ue_tput_bps: list[tuple[int, int, float]]  # (cell, ue_idx, throughput)
    layer_hist: dict[int, int]
    n_decisions: int
    n_rank_gt4: int
    cell_tput_bps: dict[int, float]
    decision_rows: list[tuple] = field(default_factory=list)


def _batched_mmse_sinr(a: np.ndarray, r_cov: np.ndarray) -> np.ndarray:
    """Per-layer MMSE SINR for a batch of effective channels (F, n_rx, L)."""
    r_inv = np.linalg.inv(r_cov)
    m = np.einsum("fil,ij,fjk->flk", np.conj(a), r_inv, a, optimize=True)
    m = m + np.eye(m.shape[-1])[None, :, :]
    d = np.real(np.diagonal(np.linalg.inv(m), axis1=1, axis2=2))
    return 1.0 / np.maximum(d, 1e-300) - 1.0


def _realize_drop_links(cfg: CampaignConfig, drop_idx: int,
                        bs_geom: ArrayGeometry, ue_geom: ArrayGeometry,
                        drops: list[UEDrop], forced_los: bool | None = None,
                        forced_rank: int | None = None) -> list[UELink]:
    """Generate channels and precompute per-UE realized link quality."""
    layout = cfg.layout
    cells = layout.cells()
    params = cfg.channel
    n_f = cfg.n_rb_groups
    rb_bw = cfg.rb_group_bw
    p_rbg = 10.0 ** ((cfg.tx_power_dbm - 30.0) / 10.0) / n_f
    noise = noise_power_w(rb_bw, cfg.noise_figure_db)
    n_tx = bs_geom.n_ports
    n_rx = ue_geom.n_ports
    mu = cfg.mode == "mu"
    links: list[UELink] = []

    for ue_idx, ue in enumerate(drops):
        serving = cells[ue.serving_cell]
        ue_boresight = bearing_to_cell(serving, ue.pos, layout)
        h_serv = None
        r_int = np.zeros((n_rx, n_rx), dtype=complex)
        for cell in cells:
            geom = link_geometry(cell, ue.pos, ue_boresight, layout)
            rng_ls = substream(cfg.seed, "shadowing", drop_idx, ue_idx, cell.cell_id)
            if forced_los is None:
                los = bool(rng_ls.uniform() < los_probability(geom.d2d))
            else:
                los = forced_los
            sf_std = params.shadowing_std_los if los else params.shadowing_std_nlos
            sf = float(rng_ls.normal(0.0, sf_std))
            pl = pathloss(geom.d2d, geom.d3d, cfg.carrier_hz, los, layout)
            rng_cl = substream(cfg.seed, "clusters", drop_idx, ue_idx, cell.cell_id)
            clusters = generate_clusters(geom, params, los, rng_cl,
                                         pathloss_db=pl, shadowing_db=sf)
            if cell.cell_id == ue.serving_cell:
                h_serv = channel_matrix(clusters, bs_geom, ue_geom, n_f, rb_bw,
                                        link_id=f"d{drop_idx}u{ue_idx}c{cell.cell_id}",
                                        dtype=np.complex128).h
            else:
                r_int += (p_rbg / n_tx) * wideband_rx_covariance(clusters, bs_geom, ue_geom)

        r_cov = noise * np.eye(n_rx) + r_int
        sigma_eff = noise + float(np.real(np.trace(r_int))) / n_rx
        if mu:
            # MU candidates only need wideband effective rows and a rate
            # estimate for PF ordering; the SU realization path is skipped
            c_rx = np.einsum("fij,fkj->ik", h_serv, np.conj(h_serv)) / n_f
            evals, evecs = np.linalg.eigh(c_rx)
            order = np.argsort(evals)[::-1]
            evals, evecs = np.maximum(evals[order], 0.0), evecs[:, order]
            r_u = int(np.sum(evals >= MU_RANK_MIN_EIG * max(evals[0], 1e-300)))
            r_u = max(1, min(r_u, cfg.mu_rank_per_ue))
            u = evecs[:, :r_u]  # (n_rx, r)
            rbg_eff = np.einsum("ir,fij->frj", np.conj(u), h_serv)  # (F, r, n_tx)
            stacked = rbg_eff.reshape(-1, n_tx) / np.sqrt(n_f)
            _, s, vh = np.linalg.svd(stacked, full_matrices=False)
            eff_rows = s[:r_u, None] * vh[:r_u]
            nu = np.real(np.einsum("ir,ij,jr->r", np.conj(u), r_cov, u))
            est_sinr = (s[:r_u] ** 2) * (p_rbg / r_u) / nu
            est_se = se_from_sinr(est_sinr, cfg.se_cap, cfg.se_attenuation_db)
            est_rate = float((1.0 - cfg.overhead) * np.sum(est_se) * cfg.bandwidth_hz)
            prec = Precoder(matrix=np.conj(vh[:r_u]).T, layer_power=np.full(r_u, 1.0 / r_u))
            ue_link = UELink(ue_idx=ue_idx, serving_cell=ue.serving_cell,
                             su_rate_bps=est_rate, su_rank=r_u,
                             su_sinr=est_sinr, su_precoder=prec,
                             mu_eff_rows=eff_rows, mu_noise=nu, mu_rbg_eff=rbg_eff)
            links.append(ue_link)
            continue

        cov_tx = wideband_tx_covariance(h_serv)
        eig = covariance_eig(cov_tx, top_k=max(cfg.max_rank_su, n_rx))
        if forced_rank is not None:
            rank = min(forced_rank, n_rx, n_tx)
        else:
            rank = select_rank(cov_tx, sigma_eff, min(cfg.max_rank_su, n_rx),
                               total_power=p_rbg, eig=eig)
        prec = svd_precoder(cov_tx, rank, eig=eig)
        a_f = h_serv @ prec.effective(p_rbg)  # (F, n_rx, r)
        sinr = _batched_mmse_sinr(a_f, r_cov)  # (F, r)
        se = se_from_sinr(np.maximum(sinr, 0.0), cfg.se_cap, cfg.se_attenuation_db)
        rate = float((1.0 - cfg.overhead) * np.sum(se) * rb_bw)
        links.append(UELink(ue_idx=ue_idx, serving_cell=ue.serving_cell,
                            su_rate_bps=rate, su_rank=prec.n_layers,
                            su_sinr=np.mean(sinr, axis=0), su_precoder=prec))
    return links


def _build_cell_states(cfg: CampaignConfig, links: list[UELink]) -> list[CellState]:
    by_cell: dict[int, list[UELink]] = {}
    for lk in links:
        by_cell.setdefault(lk.serving_cell, []).append(lk)
    states = []
    for cell_id in sorted(by_cell):
        lks = sorted(by_cell[cell_id], key=lambda l: l.ue_idx)
        mu = cfg.mode == "mu"
        state = CellState(
            cell_id=cell_id,
            ue_ids=np.array([l.ue_idx for l in lks]),
            su_rates=np.array([l.su_rate_bps for l in lks]),
            su_ranks=np.array([l.su_rank for l in lks]),
            su_sinr=[l.su_sinr for l in lks],
            su_precoders=[l.su_precoder for l in lks],
            mu_eff_rows=[l.mu_eff_rows for l in lks] if mu else None,
            mu_noise=[l.mu_noise for l in lks] if mu else None,
            mu_rbg_eff=[l.mu_rbg_eff for l in lks] if mu else None,
            pf_window=cfg.pf_window_ttis,
            pf_exponent=cfg.pf_exponent,
        )
        states.append(state)
    return states


def _tti_params(cfg: CampaignConfig) -> TtiParams:
    p_rbg = 10.0 ** ((cfg.tx_power_dbm - 30.0) / 10.0) / cfg.n_rb_groups
    return TtiParams(total_power_rbg=p_rbg, rb_group_bw=cfg.rb_group_bw,
                     n_rb_groups=cfg.n_rb_groups, overhead=cfg.overhead,
                     se_cap=cfg.se_cap, se_att=cfg.se_attenuation_db,
                     max_paired=cfg.mu_max_paired,
                     max_total_layers_mu=2 * cfg.mu_max_paired,
                     max_total_layers_su=cfg.max_rank_su)


def run_drop(cfg: CampaignConfig, drop_idx: int) -> DropResult:
    """Realize one drop and run its TTI loop; pure function of (config, drop)."""
    bs_cfg = array_preset(cfg.bs_array, carrier_freq=cfg.carrier_hz)
    ue_cfg = array_preset(cfg.ue_array, carrier_freq=cfg.carrier_hz)
    bs_geom = build_array(bs_cfg)
    ue_geom = build_array(ue_cfg)
    drops = drop_ues(cfg.layout, cfg.ues_per_cell, cfg.seed, bs_cfg, drop_index=drop_idx)
    links = _realize_drop_links(cfg, drop_idx, bs_geom, ue_geom, drops)
    states = _build_cell_states(cfg, links)
    params = _tti_params(cfg)

    bits: dict[tuple[int, int], float] = {}
    cell_bits: dict[int, float] = {}
    hist: dict[int, int] = {}
    n_dec = 0
    n_gt4 = 0
    rows = []
    measured = cfg.ttis_per_drop - cfg.warmup_ttis
    for tti in range(cfg.ttis_per_drop):
        for state in states:
            d = run_tti(state, cfg.mode, tti, params)
            if tti < cfg.warmup_ttis:
                continue
            n_dec += 1
            layers = d.total_layers
            hist[layers] = hist.get(layers, 0) + 1
            if layers > 4:
                n_gt4 += 1
            for u, rank, rate in zip(d.ue_ids, d.ranks, d.rates_bps):
                bits[(state.cell_id, u)] = bits.get((state.cell_id, u), 0.0) + rate * TTI_SECONDS
                cell_bits[state.cell_id] = cell_bits.get(state.cell_id, 0.0) + rate * TTI_SECONDS
                if cfg.decision_log:
                    rows.append((drop_idx, tti, state.cell_id, u, rank, rate))
    span = measured * TTI_SECONDS
    ue_tput = []
    for lk in links:
        key = (lk.serving_cell, lk.ue_idx)
        ue_tput.append((lk.serving_cell, lk.ue_idx, bits.get(key, 0.0) / span))
    cell_tput = {c: b / span for c, b in sorted(cell_bits.items())}
    return DropResult(drop_idx=drop_idx, ue_tput_bps=ue_tput, layer_hist=hist,
                      n_decisions=n_dec, n_rank_gt4=n_gt4, cell_tput_bps=cell_tput,
                      decision_rows=rows)


def _drop_worker(args) -> DropResult:
    cfg, drop_idx = args
    return run_drop(cfg, drop_idx)


# ----------------------------------------------------------------------------
# aggregation and reports


@dataclass
class ThroughputReport:
    scenario: str
    seed: int
    config: dict
    per_ue: list[dict]  # drop, cell, ue, tput_bps
    mean_ue_tput_bps: float
    p5_ue_tput_bps: float
    avg_scheduled_layers: float
    frac_decisions_rank_gt4: float
    layer_histogram: dict[int, int]
    per_cell_tput_bps: dict[int, float]
    n_decisions: int

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "xmimo-report",
            "scenario": self.scenario,
            "seed": self.seed,
            "config": self.config,
            "results": {
                "mean_ue_tput_bps": self.mean_ue_tput_bps,
                "p5_ue_tput_bps": self.p5_ue_tput_bps,
                "avg_scheduled_layers": self.avg_scheduled_layers,
                "frac_decisions_rank_gt4": self.frac_decisions_rank_gt4,
                "n_decisions": self.n_decisions,
                "layer_histogram": {str(k): v for k, v in sorted(self.layer_histogram.items())},
                "per_cell_tput_bps": {str(k): v for k, v in sorted(self.per_cell_tput_bps.items())},
                "per_ue": self.per_ue,
            },
        }


def report_from_dict(d: dict) -> ThroughputReport:
    if d.get("kind") != "xmimo-report":
        raise ValueError("not an xmimo report file")
    res = d["results"]
    return ThroughputReport(
        scenario=d["scenario"], seed=d["seed"], config=d["config"],
        per_ue=res["per_ue"],
        mean_ue_tput_bps=res["mean_ue_tput_bps"],
        p5_ue_tput_bps=res["p5_ue_tput_bps"],
        avg_scheduled_layers=res["avg_scheduled_layers"],
        frac_decisions_rank_gt4=res["frac_decisions_rank_gt4"],
        layer_histogram={int(k): v for k, v in res["layer_histogram"].items()},
        per_cell_tput_bps={int(k): v for k, v in res["per_cell_tput_bps"].items()},
        n_decisions=res["n_decisions"],
    )


def aggregate(cfg: CampaignConfig, results: list[DropResult]) -> ThroughputReport:
    """Fixed-order reduction over drops (order independence by construction)."""
    results = sorted(results, key=lambda r: r.drop_idx)
    per_ue = []
    tputs = []
    hist: dict[int, int] = {}
    n_dec = 0
    n_gt4 = 0
    cell_acc: dict[int, list[float]] = {}
    for r in results:
        for cell, ue, tput in r.ue_tput_bps:
            per_ue.append({"drop": r.drop_idx, "cell": cell, "ue": ue, "tput_bps": tput})
            tputs.append(tput)
        for k, v in r.layer_hist.items():
            hist[k] = hist.get(k, 0) + v
        n_dec += r.n_decisions
        n_gt4 += r.n_rank_gt4
        for c, t in r.cell_tput_bps.items():
            cell_acc.setdefault(c, []).append(t)
    tputs_arr = np.asarray(tputs)
    avg_layers = (sum(k * v for k, v in hist.items()) / n_dec) if n_dec else 0.0
    return ThroughputReport(
        scenario=cfg.scenario, seed=cfg.seed, config=cfg.to_dict(),
        per_ue=per_ue,
        mean_ue_tput_bps=float(np.mean(tputs_arr)) if len(tputs_arr) else 0.0,
        p5_ue_tput_bps=float(np.percentile(tputs_arr, 5.0)) if len(tputs_arr) else 0.0,
        avg_scheduled_layers=float(avg_layers),
        frac_decisions_rank_gt4=(n_gt4 / n_dec) if n_dec else 0.0,
        layer_histogram=hist,
        per_cell_tput_bps={c: float(np.mean(v)) for c, v in cell_acc.items()},
        n_decisions=n_dec,
    )


def run_campaign(config: CampaignConfig, threads: int | None = None,
                 out_dir: str | None = None) -> ThroughputReport:
    """Run all drops (optionally in parallel) and aggregate; writes outputs
    and a run manifest when out_dir is given. Deterministic per (config, seed)."""
    config.validate()
    t0 = time.monotonic()
    n_workers = threads if threads and threads > 0 else (os.cpu_count() or 1)
    n_workers = min(n_workers, config.n_drops)
    jobs = [(config, i) for i in range(config.n_drops)]
    if n_workers <= 1:
        results = [run_drop(config, i) for i in range(config.n_drops)]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(_drop_worker, jobs))
    report = aggregate(config, results)
    if out_dir is not None:
        write_report(report, out_dir)
        if config.decision_log:
            rows = [row for r in sorted(results, key=lambda r: r.drop_idx)
                    for row in r.decision_rows]
            write_csv(os.path.join(out_dir, "decisions.csv"),
                      ["drop", "tti", "cell", "ue", "rank", "rate_bps"], rows)
        manifest = {
            "schema_version": 1,
            "config_hash": config_hash(config.to_dict()),
            "seed": config.seed,
            "xmimo_version": __version__,
            "outputs": sorted(f for f in os.listdir(out_dir)
                              if f != "run_manifest.json"),
            "duration_s": time.monotonic() - t0,
            "threads": n_workers,
        }
        write_json_atomic(os.path.join(out_dir, "run_manifest.json"), manifest)
    return report


def write_report(report: ThroughputReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    cfg = report.config
    write_csv(os.path.join(out_dir, "summary.csv"),
              ["scenario", "mode", "bs_array", "ue_array", "isd", "ues_per_cell", "seed",
               "mean_ue_tput_bps", "p5_ue_tput_bps", "avg_scheduled_layers",
               "frac_decisions_rank_gt4", "n_decisions"],
              [(report.scenario, cfg["mode"], cfg["bs_array"], cfg["ue_array"],
                cfg["layout"]["isd"], cfg["ues_per_cell"], report.seed,
                report.mean_ue_tput_bps, report.p5_ue_tput_bps,
                report.avg_scheduled_layers, report.frac_decisions_rank_gt4,
                report.n_decisions)])
    write_csv(os.path.join(out_dir, "layers_hist.csv"), ["layers", "count"],
              sorted(report.layer_histogram.items()))
    write_csv(os.path.join(out_dir, "per_ue.csv"),
              ["scenario", "drop", "cell", "ue", "tput_bps"],
              [(report.scenario, r["drop"], r["cell"], r["ue"], r["tput_bps"])
               for r in report.per_ue])


def compare(reports: list[ThroughputReport], baseline: str | int) -> list[dict]:
    """Relative table: each metric as percent of the baseline report.

    baseline selects by scenario name or list index. Reports must share
    bandwidth, mode and layout shape (sites/sectors); the comparison
    dimensions (arrays, ISD, density) may differ.
    """
    if len(reports) < 1:
        raise ValueError("need at least one report")
    if isinstance(baseline, int):
        base = reports[baseline]
    else:
        matches = [r for r in reports if r.scenario == baseline]
        if not matches:
            raise ValueError(f"baseline scenario {baseline!r} not among reports")
        base = matches[0]
    for r in reports:
        for key in ("bandwidth_hz", "mode"):
            if r.config[key] != base.config[key]:
                raise ValueError(f"mismatched scenario semantics: {key} differs "
                                 f"({r.scenario} vs {base.scenario})")
        for key in ("n_sites", "sectors_per_site"):
            if r.config["layout"][key] != base.config["layout"][key]:
                raise ValueError(f"mismatched scenario semantics: layout.{key} differs")
    base_cell = float(np.mean(list(base.per_cell_tput_bps.values()))) if base.per_cell_tput_bps else 0.0
    rows = []
    for r in reports:
        cell = float(np.mean(list(r.per_cell_tput_bps.values()))) if r.per_cell_tput_bps else 0.0
        rows.append({
            "scenario": r.scenario,
            "bs_array": r.config["bs_array"],
            "ue_array": r.config["ue_array"],
            "isd": r.config["layout"]["isd"],
            "ues_per_cell": r.config["ues_per_cell"],
            "mode": r.config["mode"],
            "avg_ue_tput_rel_pct": 100.0 * r.mean_ue_tput_bps / base.mean_ue_tput_bps,
            "p5_ue_tput_rel_pct": 100.0 * r.p5_ue_tput_bps / base.p5_ue_tput_bps,
            "avg_scheduled_layers": r.avg_scheduled_layers,
            "cell_tput_rel_pct": 100.0 * cell / base_cell if base_cell else 0.0,
        })
    return rows


def write_compare_csv(rows: list[dict], path: str) -> None:
    header = ["scenario", "bs_array", "ue_array", "isd", "ues_per_cell", "mode",
              "avg_ue_tput_rel_pct", "p5_ue_tput_rel_pct", "avg_scheduled_layers",
              "cell_tput_rel_pct"]
    write_csv(path, header, [[row[h] for h in header] for row in rows])


def peak_rate_probe(config: CampaignConfig, ue_distance_m: float,
                    los: bool = True) -> float:
    """Single-cell single-UE probe: forced LOS, rank-8 transmission.

    Places one UE at the given boresight distance in a one-sector layout and
    reports the mean throughput over 100 TTIs (static channel, SU mode).
    """
    if config.mode != "su":
        raise ConfigError("mode", "peak_rate_probe requires SU mode")
    layout = replace(config.layout, n_sites=1, sectors_per_site=1, wraparound=False)
    cfg = replace(config, layout=layout, ues_per_cell=1, n_drops=1)
    if ue_distance_m < layout.min_bs_ue_dist_2d:
        raise ConfigError("layout.min_bs_ue_dist_2d",
                          f"probe distance {ue_distance_m} violates the minimum")
    bs_cfg = array_preset(cfg.bs_array, carrier_freq=cfg.carrier_hz)
    ue_cfg = array_preset(cfg.ue_array, carrier_freq=cfg.carrier_hz)
    bs_geom = build_array(bs_cfg)
    ue_geom = build_array(ue_cfg)
    drops = [UEDrop(pos=np.array([ue_distance_m, 0.0]), drop_cell=0, serving_cell=0)]
    links = _realize_drop_links(cfg, 0, bs_geom, ue_geom, drops,
                                forced_los=los, forced_rank=min(8, ue_geom.n_ports))
    states = _build_cell_states(cfg, links)
    params = _tti_params(cfg)
    total = 0.0
    n_ttis = 100
    for tti in range(n_ttis):
        d = run_tti(states[0], "su", tti, params)
        total += sum(d.rates_bps)
    return total / n_ttis
