"""Power-angular profiles, cluster peak detection and layer-to-cluster maps.

The angular spectrum is a Bartlett (matched-filter) scan of the per-RB
channel rows against one polarization group's port steering vectors:
P(az, zen) = sum_rb sum_rx | a(az, zen)^H h_rx,rb |^2, normalized to a 0 dB
peak. Matched filtering is deliberately chosen over super-resolution methods;
the heatmaps carry a -30 dB display floor downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import ArrayGeometry, Codebook, steering_matrix
from .formats import fmt
from .precoding import Precoder

DEFAULT_AZ_GRID = np.arange(-90.0, 90.0 + 0.5, 1.0)
DEFAULT_ZEN_GRID = np.arange(60.0, 120.0 + 0.5, 1.0)
DETECT_THRESHOLD_DB = -12.0
DETECT_MIN_SEPARATION_DEG = 5.0
REGION_DROP_DB = 6.0
ASSOCIATE_RADIUS_DEG = 10.0


@dataclass
class AngularProfile:
    az_grid: np.ndarray  # (A,) strictly increasing, degrees
    zen_grid: np.ndarray  # (Z,)
    power_db: np.ndarray  # (Z, A), peak exactly 0 dB

    def peak_cell(self) -> tuple[int, int]:
        zi, ai = np.unravel_index(int(np.argmax(self.power_db)), self.power_db.shape)
        return int(zi), int(ai)


@dataclass
class ClusterEstimate:
    az: np.ndarray  # (K,) peak azimuths, power-descending
    zen: np.ndarray
    power_db: np.ndarray
    regions: list[np.ndarray]  # per cluster, (n_i, 2) of (zen_idx, az_idx); disjoint
    az_grid: np.ndarray
    zen_grid: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.az)


@dataclass
class LayerBeamMap:
    beam_az: np.ndarray  # (L,) nominal beam angles
    beam_zen: np.ndarray
    cluster_idx: np.ndarray  # (L,) associated cluster, -1 = none
    beam_ids: np.ndarray
    beam_pols: np.ndarray


def power_angular_profile(h_rbs: np.ndarray, bs_geom: ArrayGeometry,
                          az_grid: np.ndarray = DEFAULT_AZ_GRID,
                          zen_grid: np.ndarray = DEFAULT_ZEN_GRID,
                          pol_group: int = 0) -> AngularProfile:
    """Bartlett spectrum of per-RB matrices (F, n_rx, n_tx) over a 2D grid."""
    az_grid = np.asarray(az_grid, dtype=float)
    zen_grid = np.asarray(zen_grid, dtype=float)
    if az_grid.size == 0 or zen_grid.size == 0:
        raise ValueError("grids must be non-empty")
    if np.any(np.diff(az_grid) <= 0) or np.any(np.diff(zen_grid) <= 0):
        raise ValueError("grids must be strictly increasing")
    ports = bs_geom.pol_groups()[pol_group]
    zz, aa = np.meshgrid(zen_grid, az_grid, indexing="ij")
    steer = steering_matrix(bs_geom, aa.ravel(), zz.ravel(), ports=ports)  # (D, P)
    rows = h_rbs[:, :, ports].reshape(-1, len(ports))  # (F*n_rx, P)
    power = np.sum(np.abs(np.conj(steer) @ rows.T) ** 2, axis=1)  # (D,)
    power = power.reshape(zen_grid.size, az_grid.size)
    peak = np.max(power)
    if peak <= 0:
        raise ValueError("channel has no energy on the scanned grid")
    power_db = 10.0 * np.log10(power / peak)
    return AngularProfile(az_grid=az_grid, zen_grid=zen_grid, power_db=power_db)


def _local_maxima(p: np.ndarray) -> np.ndarray:
    """Cells >= all 8 neighbors; returns (n, 2) of (zen_idx, az_idx)."""
    z, a = p.shape
    pad = np.full((z + 2, a + 2), -np.inf)
    pad[1:-1, 1:-1] = p
    keep = np.ones((z, a), dtype=bool)
    for dz in (-1, 0, 1):
        for da in (-1, 0, 1):
            if dz == 0 and da == 0:
                continue
            keep &= p >= pad[1 + dz:1 + dz + z, 1 + da:1 + da + a]
    return np.argwhere(keep)


def detect_clusters(profile: AngularProfile, threshold_db: float = DETECT_THRESHOLD_DB,
                    min_separation: float = DETECT_MIN_SEPARATION_DEG) -> ClusterEstimate:
    """Greedy peak picking with angular exclusion and -6 dB support regions.

    Local maxima above the (negative) threshold are accepted in descending
    power unless within min_separation degrees of an accepted peak. Each
    accepted peak claims the connected set of unclaimed cells within
    REGION_DROP_DB of its own power.
    """
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (profile peak is 0 dB)")
    p = profile.power_db
    cand = _local_maxima(p)
    cand = cand[p[cand[:, 0], cand[:, 1]] >= threshold_db]
    # power-descending, deterministic tie-break on grid position
    order = sorted(range(len(cand)),
                   key=lambda i: (-p[cand[i, 0], cand[i, 1]], cand[i, 0], cand[i, 1]))
    accepted: list[tuple[int, int]] = []
    for i in order:
        zi, ai = int(cand[i, 0]), int(cand[i, 1])
        az, zen = profile.az_grid[ai], profile.zen_grid[zi]
        ok = True
        for zj, aj in accepted:
            d = np.hypot(az - profile.az_grid[aj], zen - profile.zen_grid[zj])
            if d < min_separation:
                ok = False
                break
        if ok:
            accepted.append((zi, ai))

    claimed = np.zeros(p.shape, dtype=bool)
    regions = []
    for zi, ai in accepted:
        floor = p[zi, ai] - REGION_DROP_DB
        region = []
        stack = [(zi, ai)]
        seen = set()
        while stack:
            z0, a0 = stack.pop()
            if (z0, a0) in seen:
                continue
            seen.add((z0, a0))
            if not (0 <= z0 < p.shape[0] and 0 <= a0 < p.shape[1]):
                continue
            if claimed[z0, a0] or p[z0, a0] < floor:
                continue
            claimed[z0, a0] = True
            region.append((z0, a0))
            stack.extend([(z0 + 1, a0), (z0 - 1, a0), (z0, a0 + 1), (z0, a0 - 1)])
        regions.append(np.asarray(region, dtype=int).reshape(-1, 2))
    return ClusterEstimate(
        az=np.array([profile.az_grid[a] for _, a in accepted]),
        zen=np.array([profile.zen_grid[z] for z, _ in accepted]),
        power_db=np.array([p[z, a] for z, a in accepted]),
        regions=regions, az_grid=profile.az_grid, zen_grid=profile.zen_grid,
    )


def associate_layers(precoder: Precoder, codebook: Codebook,
                     clusters: ClusterEstimate,
                     radius_deg: float = ASSOCIATE_RADIUS_DEG) -> LayerBeamMap:
    """Map each layer's beam to a cluster: containing -6 dB region, else the
    nearest peak within radius_deg, else none (-1)."""
    if precoder.beam_ids is None:
        raise ValueError("precoder carries no codebook beam ids")
    beam_ids = np.asarray(precoder.beam_ids, dtype=int)
    beam_pols = (np.asarray(precoder.beam_pols, dtype=int)
                 if precoder.beam_pols is not None else np.zeros_like(beam_ids))
    angles = codebook.beam_angles[beam_ids]
    out = np.full(len(beam_ids), -1, dtype=int)
    region_lookup = {}
    for k, region in enumerate(clusters.regions):
        for z0, a0 in region:
            region_lookup[(int(z0), int(a0))] = k
    for l, (az, zen) in enumerate(angles):
        ai = int(np.argmin(np.abs(clusters.az_grid - az)))
        zi = int(np.argmin(np.abs(clusters.zen_grid - zen)))
        hit = region_lookup.get((zi, ai))
        if hit is not None:
            out[l] = hit
            continue
        if clusters.n_clusters:
            d = np.hypot(clusters.az - az, clusters.zen - zen)
            k = int(np.argmin(d))
            if d[k] <= radius_deg:
                out[l] = k
    return LayerBeamMap(beam_az=angles[:, 0], beam_zen=angles[:, 1],
                        cluster_idx=out, beam_ids=beam_ids, beam_pols=beam_pols)


def export_heatmap(profile: AngularProfile, path: str) -> None:
    """CSV: header row = azimuth grid, first column = zenith grid, cells = dB."""
    try:
        with open(path, "w") as f:
            f.write("zen_deg\\az_deg," + ",".join(fmt(a) for a in profile.az_grid) + "\n")
            for zi, zen in enumerate(profile.zen_grid):
                f.write(fmt(zen) + "," + ",".join(fmt(v) for v in profile.power_db[zi]) + "\n")
    except OSError as e:
        raise OSError(f"cannot write heatmap to {path}: {e}") from None


def import_heatmap(path: str) -> AngularProfile:
    with open(path) as f:
        header = f.readline().strip().split(",")
        az = np.array([float(v) for v in header[1:]])
        zen, rows = [], []
        for line in f:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            zen.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    return AngularProfile(az_grid=az, zen_grid=np.array(zen), power_db=np.array(rows))


def export_beams(layer_map: LayerBeamMap, path: str) -> None:
    """One row per layer: nominal beam angle, codebook id, pol group, cluster."""
    try:
        with open(path, "w") as f:
            f.write("layer,beam_az_deg,beam_zen_deg,beam_id,pol_group,cluster\n")
            for l in range(len(layer_map.beam_az)):
                f.write(",".join([str(l + 1), fmt(layer_map.beam_az[l]),
                                  fmt(layer_map.beam_zen[l]), str(int(layer_map.beam_ids[l])),
                                  str(int(layer_map.beam_pols[l])),
                                  str(int(layer_map.cluster_idx[l]))]) + "\n")
    except OSError as e:
        raise OSError(f"cannot write beams to {path}: {e}") from None


def export_clusters(clusters: ClusterEstimate, path: str,
                    delays_s: np.ndarray | None = None) -> None:
    """Detected peaks; optional per-cluster generator delays for cross-checks."""
    with open(path, "w") as f:
        f.write("cluster,az_deg,zen_deg,power_db,region_cells,delay_s\n")
        for k in range(clusters.n_clusters):
            delay = fmt(delays_s[k]) if delays_s is not None and k < len(delays_s) else ""
            f.write(",".join([str(k), fmt(clusters.az[k]), fmt(clusters.zen[k]),
                              fmt(clusters.power_db[k]), str(len(clusters.regions[k])),
                              delay]) + "\n")


def export_association(layer_map: LayerBeamMap, path: str) -> None:
    with open(path, "w") as f:
        f.write("layer,cluster\n")
        for l, c in enumerate(layer_map.cluster_idx):
            f.write(f"{l + 1},{int(c)}\n")
