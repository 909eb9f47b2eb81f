"""Network drops and clustered stochastic downlink channels (UMa-flavored).

The propagation layer adopts the standard published urban-macro closed forms
(TR 38.901 style) as fixed internal constants so golden test values stay
auditable:

  LOS  PL1 = 28.0 + 22*log10(d3d) + 20*log10(fc_GHz)          d2d <= d_bp
       PL2 = 28.0 + 40*log10(d3d) + 20*log10(fc_GHz)
             - 9*log10(d_bp^2 + (h_bs - h_ut)^2)               d2d >  d_bp
       d_bp = 4*(h_bs - 1)*(h_ut - 1)*fc/c
  NLOS PL  = max(PL_LOS, 13.54 + 39.08*log10(d3d)
                 + 20*log10(fc_GHz) - 0.6*(h_ut - 1.5))
  P_LOS(d) = 1 for d <= 18 m, else 18/d + exp(-d/63)*(1 - 18/d)

The fast-fading model is a reduced clustered parameterization: exponential
delay profile, per-cluster mean angles drawn around the LOS bearing, Gaussian
per-ray offsets, per-ray random-phase 2x2 polarization coupling with scalar
XPR, i.i.d. log-normal shadowing. LOS links prepend a single specular ray
with Rician power split K/(K+1).

All randomness flows from one campaign seed through named substreams, so a
(seed, geometry) pair bit-reproduces every draw.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayConfig, ArrayGeometry, element_pattern_gain, steering_matrix, C_LIGHT

# Fixed internals of the reduced cluster model
DELAY_SCALING = 2.3  # exponential delay profile scaling r_tau
CLUSTER_SHADOW_STD_DB = 3.0  # per-cluster power jitter
INTER_CLUSTER_SPREAD_SCALE = 3.0  # cluster-mean spread = scale * per-ray spread

# Reference element pattern used for serving-cell assignment (macro defaults)
_REF_PATTERN = ArrayConfig(port_cols=1, port_rows=1, dual_polarized=False, subarray_len=1)


def substream(seed: int, *keys) -> np.random.Generator:
    """Named, platform-stable RNG substream of a campaign seed.

    String keys are hashed with crc32; integer keys are used directly. The
    same (seed, keys) always yields the same generator state.
    """
    spawn = tuple(
        zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF for k in keys
    )
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn))


@dataclass(frozen=True)
class NetworkLayout:
    n_sites: int = 7
    sectors_per_site: int = 3
    isd: float = 500.0
    bs_height: float = 25.0
    ue_height: float = 1.5
    min_bs_ue_dist_2d: float = 35.0
    wraparound: bool = True

    def validate(self) -> None:
        if self.isd <= 0:
            raise ValueError("isd must be positive")
        if self.n_sites < 1 or self.sectors_per_site < 1:
            raise ValueError("layout must contain at least one site and sector")
        if self.min_bs_ue_dist_2d >= self.isd / np.sqrt(3.0):
            raise ValueError("min_bs_ue_dist_2d leaves no droppable cell area")
        if self.wraparound and self.n_sites not in (1, 7):
            raise ValueError("geometric wraparound is defined for 1- or 7-site layouts")

    @property
    def n_cells(self) -> int:
        return self.n_sites * self.sectors_per_site

    def site_positions(self) -> np.ndarray:
        """Hex-spiral site positions, center first, ring neighbors at ISD."""
        a1 = np.array([self.isd, 0.0])
        a2 = np.array([self.isd / 2.0, self.isd * np.sqrt(3.0) / 2.0])
        axials = [(0, 0)]
        ring = 1
        while len(axials) < self.n_sites:
            # walk the hex ring counter-clockwise starting east
            q, r = ring, 0
            steps = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
            for dq, dr in steps:
                for _ in range(ring):
                    axials.append((q, r))
                    q, r = q + dq, r + dr
            ring += 1
        axials = axials[: self.n_sites]
        return np.array([q * a1 + r * a2 for q, r in axials])

    def cells(self) -> list["Cell"]:
        sites = self.site_positions()
        out = []
        for s in range(self.n_sites):
            for k in range(self.sectors_per_site):
                boresight = 360.0 * k / self.sectors_per_site
                out.append(Cell(cell_id=s * self.sectors_per_site + k, site=s,
                                sector=k, pos=sites[s], boresight_deg=boresight))
        return out

    def wrap_offsets(self) -> np.ndarray:
        """Translation images for geometric wraparound ((k, 2), first row zero)."""
        if not self.wraparound or self.n_sites == 1:
            return np.zeros((1, 2))
        a1 = np.array([self.isd, 0.0])
        a2 = np.array([self.isd / 2.0, self.isd * np.sqrt(3.0) / 2.0])
        u1 = 2 * a1 + a2  # 7-site cluster repeat vector, |u1| = sqrt(7)*isd
        u2 = -a1 + 3 * a2
        offs = [np.zeros(2), u1, -u1, u2, -u2, u2 - u1, u1 - u2]
        return np.array(offs)


@dataclass(frozen=True)
class Cell:
    cell_id: int
    site: int
    sector: int
    pos: np.ndarray
    boresight_deg: float


@dataclass(frozen=True)
class ChannelParams:
    n_clusters: int = 12
    rays_per_cluster: int = 8
    delay_spread: float = 300e-9
    asd: float = 5.0  # per-ray azimuth-of-departure spread, degrees
    zsd: float = 2.0
    asa: float = 15.0
    zsa: float = 5.0
    rician_k_db_mean: float = 9.0
    rician_k_db_std: float = 3.0
    xpr_db: float = 8.0
    shadowing_std_los: float = 4.0
    shadowing_std_nlos: float = 6.0
    pathloss_model: str = "uma"

    def validate(self) -> None:
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ValueError("cluster and ray counts must be >= 1")
        if min(self.delay_spread, self.asd, self.zsd, self.asa, self.zsa) <= 0:
            raise ValueError("spreads must be positive")
        if self.pathloss_model != "uma":
            raise ValueError(f"unsupported pathloss model '{self.pathloss_model}'")


def los_probability(d2d: float) -> float:
    """Urban-macro outdoor LOS probability (UE height below the high-rise term)."""
    if d2d < 0:
        raise ValueError("d2d must be non-negative")
    if d2d <= 18.0:
        return 1.0
    return 18.0 / d2d + np.exp(-d2d / 63.0) * (1.0 - 18.0 / d2d)


def pathloss(d2d: float, d3d: float, fc: float, los: bool, layout: NetworkLayout) -> float:
    """Urban-macro path loss in dB; NLOS is floored by the LOS branch."""
    if not d3d >= d2d > 0:
        raise ValueError("require d3d >= d2d > 0")
    d2d = max(d2d, 10.0)  # formulas are specified from 10 m; clamp below
    d3d = max(d3d, 10.0)
    fc_ghz = fc / 1e9
    h_bs, h_ut = layout.bs_height, layout.ue_height
    d_bp = 4.0 * (h_bs - 1.0) * (h_ut - 1.0) * fc / C_LIGHT
    if d2d <= d_bp:
        pl_los = 28.0 + 22.0 * np.log10(d3d) + 20.0 * np.log10(fc_ghz)
    else:
        pl_los = (28.0 + 40.0 * np.log10(d3d) + 20.0 * np.log10(fc_ghz)
                  - 9.0 * np.log10(d_bp ** 2 + (h_bs - h_ut) ** 2))
    if los:
        return float(pl_los)
    pl_nlos = (13.54 + 39.08 * np.log10(d3d) + 20.0 * np.log10(fc_ghz)
               - 0.6 * (h_ut - 1.5))
    return float(max(pl_los, pl_nlos))


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class LinkGeometry:
    """Large-scale geometry of one BS-sector-to-UE link, angles in local frames."""

    d2d: float
    d3d: float
    aod_az: float  # LOS bearing in the sector frame
    aod_zen: float
    aoa_az: float  # LOS bearing in the UE panel frame
    aoa_zen: float


def link_geometry(cell: Cell, ue_pos: np.ndarray, ue_boresight_deg: float,
                  layout: NetworkLayout) -> LinkGeometry:
    """Geometry with wraparound: the closest translation image of the site is used."""
    offs = layout.wrap_offsets()
    d_vec = ue_pos[None, :] - (cell.pos[None, :] + offs)
    d2d_all = np.hypot(d_vec[:, 0], d_vec[:, 1])
    k = int(np.argmin(d2d_all))
    dv = d_vec[k]
    d2d = float(d2d_all[k])
    dz = layout.ue_height - layout.bs_height
    d3d = float(np.hypot(d2d, dz))
    az_global = np.degrees(np.arctan2(dv[1], dv[0]))
    aod_az = float(_wrap_deg(az_global - cell.boresight_deg))
    aod_zen = float(np.degrees(np.arccos(dz / d3d)))
    # arrival side: direction from the UE toward the BS image
    aoa_az = float(_wrap_deg(az_global + 180.0 - ue_boresight_deg))
    aoa_zen = float(np.degrees(np.arccos(-dz / d3d)))
    return LinkGeometry(d2d=d2d, d3d=d3d, aod_az=aod_az, aod_zen=aod_zen,
                        aoa_az=aoa_az, aoa_zen=aoa_zen)


def bearing_to_cell(cell: Cell, ue_pos: np.ndarray, layout: NetworkLayout) -> float:
    """Global azimuth from the UE toward the closest image of a cell's site."""
    offs = layout.wrap_offsets()
    d_vec = (cell.pos[None, :] + offs) - ue_pos[None, :]
    k = int(np.argmin(np.hypot(d_vec[:, 0], d_vec[:, 1])))
    return float(np.degrees(np.arctan2(d_vec[k, 1], d_vec[k, 0])))


@dataclass
class UEDrop:
    pos: np.ndarray  # (2,) meters
    drop_cell: int  # cell whose wedge the UE was dropped in
    serving_cell: int  # strongest-coupling cell


def _in_hex(d: np.ndarray, isd: float) -> bool:
    # hexagon with inradius isd/2, vertices toward 30+k*60 deg
    for ang in (0.0, 60.0, 120.0):
        u = np.array([np.cos(np.radians(ang)), np.sin(np.radians(ang))])
        if abs(float(d @ u)) > isd / 2.0 + 1e-9:
            return False
    return True


def drop_ues(layout: NetworkLayout, ues_per_cell: int, seed: int,
             bs_config: ArrayConfig | None = None, drop_index: int = 0) -> list[UEDrop]:
    """Uniform per-cell UE placement with min-distance and coupling-based serving.

    UEs are dropped uniformly in each cell's 120-degree wedge of its site
    hexagon, at least min_bs_ue_dist_2d from every site; the serving cell is
    then the strongest (pathloss + BS element gain) cell under wraparound,
    using the NLOS path-loss branch as the deterministic coupling proxy.
    """
    layout.validate()
    if ues_per_cell < 1:
        raise ValueError("ues_per_cell must be >= 1")
    pattern = bs_config if bs_config is not None else _REF_PATTERN
    rng = substream(seed, "drop", drop_index)
    cells = layout.cells()
    sites = layout.site_positions()
    half = layout.isd / 2.0
    drops: list[UEDrop] = []
    for cell in cells:
        for _ in range(ues_per_cell):
            for attempt in range(10000):
                d = rng.uniform(-half * 1.16, half * 1.16, size=2)  # hex bounding box
                if not _in_hex(d, layout.isd):
                    continue
                az = _wrap_deg(np.degrees(np.arctan2(d[1], d[0])) - cell.boresight_deg)
                if abs(az) > 60.0:
                    continue
                pos = cell.pos + d
                if np.min(np.hypot(*(pos[None, :] - sites).T)) < layout.min_bs_ue_dist_2d:
                    continue
                drops.append(UEDrop(pos=pos, drop_cell=cell.cell_id, serving_cell=-1))
                break
            else:
                raise ValueError("could not place UE under the min-distance constraint")
    # serving assignment
    fc = pattern.carrier_freq
    for ue in drops:
        best, best_c = -np.inf, -1
        for cell in cells:
            g = link_geometry(cell, ue.pos, 0.0, layout)
            cpl = (-pathloss(g.d2d, g.d3d, fc, los=False, layout=layout)
                   + float(element_pattern_gain(g.aod_az, g.aod_zen, pattern)))
            if cpl > best + 1e-12:
                best, best_c = cpl, cell.cell_id
        ue.serving_cell = best_c
    return drops


@dataclass
class ClusterSet:
    """Per-link stochastic parameters; flat per-ray arrays indexed by cluster."""

    powers: np.ndarray  # (C,) linear, sum to 1
    delays_s: np.ndarray  # (C,) sorted ascending, first = 0
    aod_az: np.ndarray  # (C,) cluster mean angles, degrees (local frames)
    aod_zen: np.ndarray
    aoa_az: np.ndarray
    aoa_zen: np.ndarray
    ray_cluster: np.ndarray  # (R,) cluster index of each ray
    ray_aod_az_off: np.ndarray  # (R,) per-ray offsets, degrees
    ray_aod_zen_off: np.ndarray
    ray_aoa_az_off: np.ndarray
    ray_aoa_zen_off: np.ndarray
    ray_phases: np.ndarray  # (R, 2, 2) polarization coupling phase draws
    ray_specular: np.ndarray  # (R,) bool, True = deterministic co-pol ray
    xpr_db: float
    los_flag: bool
    k_factor_db: float
    pathloss_db: float = 0.0
    shadowing_db: float = 0.0

    @property
    def n_clusters(self) -> int:
        return self.powers.shape[0]

    @property
    def n_rays(self) -> int:
        return self.ray_cluster.shape[0]

    def rays_in(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.ray_cluster == c)


def generate_clusters(geom: LinkGeometry, params: ChannelParams, los: bool,
                      seed_or_rng, pathloss_db: float = 0.0,
                      shadowing_db: float = 0.0) -> ClusterSet:
    """Draw a ClusterSet for one link.

    NLOS: n_clusters clusters, exponential delay profile (scaling r_tau),
    powers ~ exp(-tau*(r_tau-1)/(r_tau*DS)) with 3 dB per-cluster jitter,
    normalized to 1. Cluster mean angles are Gaussian around the LOS bearing
    with INTER_CLUSTER_SPREAD_SCALE times the per-ray spreads; per-ray offsets
    are Gaussian with the per-ray spreads. LOS prepends one specular ray at
    the exact bearing carrying K/(K+1) of the power, K drawn around
    rician_k_db_mean.
    """
    params.validate()
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else substream(int(seed_or_rng), "clusters")
    n_c = params.n_clusters - 1 if los else params.n_clusters
    n_c = max(n_c, 1)
    m = params.rays_per_cluster

    tau = -np.log(rng.uniform(size=n_c)) * params.delay_spread * DELAY_SCALING
    tau = np.sort(tau) - np.min(tau)
    p = (np.exp(-tau * (DELAY_SCALING - 1.0) / (DELAY_SCALING * params.delay_spread))
         * 10.0 ** (-rng.normal(0.0, CLUSTER_SHADOW_STD_DB, size=n_c) / 10.0))
    p = p / np.sum(p)

    scale = INTER_CLUSTER_SPREAD_SCALE
    aod_az = _wrap_deg(geom.aod_az + rng.normal(0.0, scale * params.asd, size=n_c))
    aod_zen = np.clip(geom.aod_zen + rng.normal(0.0, scale * params.zsd, size=n_c), 1.0, 179.0)
    aoa_az = _wrap_deg(geom.aoa_az + rng.normal(0.0, scale * params.asa, size=n_c))
    aoa_zen = np.clip(geom.aoa_zen + rng.normal(0.0, scale * params.zsa, size=n_c), 1.0, 179.0)

    off_aod_az = rng.normal(0.0, params.asd, size=(n_c, m))
    off_aod_zen = rng.normal(0.0, params.zsd, size=(n_c, m))
    off_aoa_az = rng.normal(0.0, params.asa, size=(n_c, m))
    off_aoa_zen = rng.normal(0.0, params.zsa, size=(n_c, m))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_c, m, 2, 2))

    k_db = float(rng.normal(params.rician_k_db_mean, params.rician_k_db_std)) if los else -np.inf
    if los:
        k_lin = 10.0 ** (k_db / 10.0)
        spec_phase = rng.uniform(0.0, 2.0 * np.pi, size=(1, 2, 2))
        powers = np.concatenate([[k_lin / (k_lin + 1.0)], p / (k_lin + 1.0)])
        delays = np.concatenate([[0.0], tau])
        order = np.argsort(delays, kind="stable")
        # specular delay 0 sorts first; scattered delays already start at 0 so
        # re-sort keeps ascending order with the specular ray leading
        powers, delays = powers[order], delays[order]
        c_aod_az = np.concatenate([[geom.aod_az], aod_az])[order]
        c_aod_zen = np.concatenate([[geom.aod_zen], aod_zen])[order]
        c_aoa_az = np.concatenate([[geom.aoa_az], aoa_az])[order]
        c_aoa_zen = np.concatenate([[geom.aoa_zen], aoa_zen])[order]
        spec_cluster = int(np.flatnonzero(order == 0)[0])
        ray_cluster, specular = [], []
        r_off = [[], [], [], []]
        r_phases = []
        for c_new in range(n_c + 1):
            c_old = order[c_new]
            if c_old == 0:
                ray_cluster.append(c_new)
                specular.append(True)
                for lst in r_off:
                    lst.append(np.zeros(1))
                r_phases.append(spec_phase)
            else:
                ray_cluster.extend([c_new] * m)
                specular.extend([False] * m)
                for lst, arr in zip(r_off, (off_aod_az, off_aod_zen, off_aoa_az, off_aoa_zen)):
                    lst.append(arr[c_old - 1])
                r_phases.append(phases[c_old - 1])
        return ClusterSet(
            powers=powers, delays_s=delays, aod_az=c_aod_az, aod_zen=c_aod_zen,
            aoa_az=c_aoa_az, aoa_zen=c_aoa_zen,
            ray_cluster=np.asarray(ray_cluster, dtype=int),
            ray_aod_az_off=np.concatenate(r_off[0]), ray_aod_zen_off=np.concatenate(r_off[1]),
            ray_aoa_az_off=np.concatenate(r_off[2]), ray_aoa_zen_off=np.concatenate(r_off[3]),
            ray_phases=np.concatenate(r_phases, axis=0),
            ray_specular=np.asarray(specular, dtype=bool), xpr_db=params.xpr_db,
            los_flag=True, k_factor_db=k_db,
            pathloss_db=pathloss_db, shadowing_db=shadowing_db,
        )
    return ClusterSet(
        powers=p, delays_s=tau, aod_az=aod_az, aod_zen=aod_zen, aoa_az=aoa_az, aoa_zen=aoa_zen,
        ray_cluster=np.repeat(np.arange(n_c), m),
        ray_aod_az_off=off_aod_az.ravel(), ray_aod_zen_off=off_aod_zen.ravel(),
        ray_aoa_az_off=off_aoa_az.ravel(), ray_aoa_zen_off=off_aoa_zen.ravel(),
        ray_phases=phases.reshape(-1, 2, 2),
        ray_specular=np.zeros(n_c * m, dtype=bool), xpr_db=params.xpr_db,
        los_flag=False, k_factor_db=k_db,
        pathloss_db=pathloss_db, shadowing_db=shadowing_db,
    )


@dataclass
class ChannelMatrix:
    link_id: str
    h: np.ndarray  # (n_rbs, n_rx_ports, n_tx_ports)
    rb_bandwidth: float
    large_scale_gain_db: float

    @property
    def n_rbs(self) -> int:
        return self.h.shape[0]


def _ray_terms(clusters: ClusterSet, bs: ArrayGeometry, ue: ArrayGeometry):
    """Per-ray amplitudes, steering vectors and coupling matrices.

    Returns (amp, a_tx, a_rx, coup, tau, lsg_lin_over_plsf) where amp folds the
    ray power share and both element patterns, a_* are per-pol-group port
    steering vectors, coup the unit-column 2x2 (or sliced) coupling, and the
    last term is the realized per-ray power fold used for large_scale_gain.
    """
    c = clusters.ray_cluster
    ray_counts = np.bincount(c, minlength=clusters.n_clusters)
    p_ray = clusters.powers[c] / ray_counts[c]
    tau = clusters.delays_s[c]

    aod_az = clusters.aod_az[c] + clusters.ray_aod_az_off
    aod_zen = np.clip(clusters.aod_zen[c] + clusters.ray_aod_zen_off, 1.0, 179.0)
    aoa_az = clusters.aoa_az[c] + clusters.ray_aoa_az_off
    aoa_zen = np.clip(clusters.aoa_zen[c] + clusters.ray_aoa_zen_off, 1.0, 179.0)

    g_bs = 10.0 ** (element_pattern_gain(aod_az, aod_zen, bs.config) / 10.0)
    g_ue = 10.0 ** (element_pattern_gain(aoa_az, aoa_zen, ue.config) / 10.0)
    amp = np.sqrt(p_ray * g_bs * g_ue)

    tx_g0 = bs.pol_groups()[0]
    rx_g0 = ue.pol_groups()[0]
    a_tx = steering_matrix(bs, aod_az, aod_zen, ports=tx_g0)  # (R, Ptxg)
    a_rx = steering_matrix(ue, aoa_az, aoa_zen, ports=rx_g0)  # (R, Prxg)

    x = 10.0 ** (-clusters.xpr_db / 20.0)
    mag = np.array([[1.0, x], [x, 1.0]]) / np.sqrt(1.0 + x * x)
    coup = mag[None, :, :] * np.exp(1j * clusters.ray_phases)
    spec = clusters.ray_specular
    if np.any(spec):
        smag = np.array([[1.0, 0.0], [0.0, 1.0]])
        coup[spec] = smag[None, :, :] * np.exp(1j * clusters.ray_phases[spec])
    n_txpol = bs.config.n_pol
    n_rxpol = ue.config.n_pol
    coup = coup[:, :n_rxpol, :n_txpol]

    cf = np.sum(np.abs(coup) ** 2, axis=(1, 2))
    s_tx = np.sum(np.abs(a_tx) ** 2, axis=1) / a_tx.shape[1]
    s_rx = np.sum(np.abs(a_rx) ** 2, axis=1) / a_rx.shape[1]
    fold = np.sum(amp ** 2 * s_tx * s_rx * cf / (n_txpol * n_rxpol))
    return amp, a_tx, a_rx, coup, tau, float(fold)


def _plsf_lin(clusters: ClusterSet) -> float:
    return 10.0 ** (-(clusters.pathloss_db + clusters.shadowing_db) / 10.0)


def channel_matrix(clusters: ClusterSet, bs: ArrayGeometry, ue: ArrayGeometry,
                   n_rbs: int, rb_bandwidth: float = 2e6, link_id: str = "link",
                   dtype=np.complex128) -> ChannelMatrix:
    """Synthesize per-RB-group channel matrices for one link.

    H_f = sqrt(plsf) * sum_rays amp * exp(-j*2*pi*f_rb*tau)
          * (coupling kron rx_steering tx_steering^H)
    with f_rb the RB-group center offsets from the carrier. The construction
    makes E||H||_F^2 / (n_rx*n_tx) equal the linear large-scale gain (path
    loss, shadowing, element gains and subarray factors folded per-ray).
    """
    if bs.config.n_pol != ue.config.n_pol and 1 not in (bs.config.n_pol, ue.config.n_pol):
        raise ValueError("polarization counts must be 1 or 2 on each side")
    amp, a_tx, a_rx, coup, tau, fold = _ray_terms(clusters, bs, ue)
    plsf = _plsf_lin(clusters)
    freqs = (np.arange(n_rbs) - (n_rbs - 1) / 2.0) * rb_bandwidth
    d = np.exp(-2j * np.pi * freqs[:, None] * tau[None, :]) * amp[None, :]  # (F, R)

    # per-ray full-panel outer products, then one gemm over rays per RB group
    z = np.einsum("rij,rp,rq->ripjq", coup, a_rx, np.conj(a_tx))
    n_rx = coup.shape[1] * a_rx.shape[1]
    n_tx = coup.shape[2] * a_tx.shape[1]
    z = z.reshape(len(amp), n_rx * n_tx).astype(dtype, copy=False)
    h = (d.astype(dtype, copy=False) @ z).reshape(n_rbs, n_rx, n_tx)
    h *= np.sqrt(plsf)
    lsg_db = 10.0 * np.log10(plsf * fold) if fold > 0 else -np.inf
    return ChannelMatrix(link_id=link_id, h=h, rb_bandwidth=rb_bandwidth,
                         large_scale_gain_db=float(lsg_db))


def wideband_rx_covariance(clusters: ClusterSet, bs: ArrayGeometry, ue: ArrayGeometry) -> np.ndarray:
    """RB-averaged receive covariance E_f[H H^H] per unit transmit port power.

    Computed ray-exactly within clusters (rays of a cluster share its delay);
    cross-cluster terms average out over the wide band and are dropped.
    """
    amp, a_tx, a_rx, coup, tau, _ = _ray_terms(clusters, bs, ue)
    plsf = _plsf_lin(clusters)
    n_rxpol, n_txpol = coup.shape[1], coup.shape[2]
    n_rx = n_rxpol * a_rx.shape[1]
    r_out = np.zeros((n_rx, n_rx), dtype=complex)
    for cidx in range(clusters.n_clusters):
        sel = clusters.rays_in(cidx)
        m = len(sel)
        g_tx = np.conj(a_tx[sel]) @ a_tx[sel].T  # [r, s] = a_tx_r^H a_tx_s
        x = amp[sel, None, None] * coup[sel]  # (m, n_rxpol, n_txpol)
        # z_j[r, (i, p)] = x[r, i, j] * a_rx[r, p]; sum the tx pol index j
        y = x.transpose(0, 2, 1)[:, :, :, None] * a_rx[sel][:, None, None, :]
        z = y.reshape(m, n_txpol, n_rx)
        for j in range(n_txpol):
            r_out += z[:, j].T @ g_tx @ np.conj(z[:, j])
    return plsf * r_out
