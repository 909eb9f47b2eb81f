import math

import numpy as np
import pytest

from xmimo.arrays import ArrayConfig, array_preset, build_array
from xmimo.channel import (ChannelParams, LinkGeometry, NetworkLayout, channel_matrix,
                           drop_ues, generate_clusters, link_geometry, los_probability,
                           pathloss, substream, wideband_rx_covariance)

LAYOUT = NetworkLayout()


def test_hex_layout_shapes():
    assert LAYOUT.site_positions().shape == (7, 2)
    assert len(LAYOUT.cells()) == 21
    ring = np.linalg.norm(LAYOUT.site_positions()[1:], axis=1)
    assert np.allclose(ring, LAYOUT.isd)
    offs = LAYOUT.wrap_offsets()
    assert np.allclose(np.linalg.norm(offs[1:], axis=1), np.sqrt(7.0) * LAYOUT.isd)


def test_drop_determinism_seed7():
    d1 = drop_ues(LAYOUT, 2, seed=7)
    d2 = drop_ues(LAYOUT, 2, seed=7)
    assert len(d1) == len(d2)
    for a, b in zip(d1, d2):
        assert np.array_equal(a.pos, b.pos)
        assert a.serving_cell == b.serving_cell


def test_drop_count_10_per_cell_21_cells():
    drops = drop_ues(LAYOUT, 10, seed=1)
    assert len(drops) == 210


def test_drop_min_distance_to_all_sites():
    drops = drop_ues(LAYOUT, 5, seed=3)
    sites = LAYOUT.site_positions()
    for ue in drops:
        d = np.min(np.hypot(*(ue.pos[None, :] - sites).T))
        assert d >= LAYOUT.min_bs_ue_dist_2d


def test_drop_rejects_unsatisfiable_min_distance():
    bad = NetworkLayout(isd=100.0, min_bs_ue_dist_2d=80.0)
    with pytest.raises(ValueError):
        drop_ues(bad, 1, seed=0)


def test_los_probability_near_and_far():
    assert los_probability(10.0) == 1.0
    assert los_probability(0.0) == 1.0
    assert los_probability(50000.0) < 1e-3


def test_los_probability_monotone_grid():
    d = np.linspace(0.0, 1000.0, 401)
    p = np.array([los_probability(x) for x in d])
    assert np.all(np.diff(p) <= 1e-12)
    assert np.all((p >= 0.0) & (p <= 1.0))


def test_pathloss_monotone_in_distance():
    dz = LAYOUT.bs_height - LAYOUT.ue_height
    d2d = np.linspace(10.0, 3000.0, 300)
    for los in (True, False):
        pl = np.array([pathloss(d, math.hypot(d, dz), 7.125e9, los, LAYOUT) for d in d2d])
        # non-decreasing up to the sub-0.01 dB breakpoint continuity wrinkle
        assert np.all(np.diff(pl) >= -1e-2)


def test_pathloss_nlos_floored_by_los():
    dz = LAYOUT.bs_height - LAYOUT.ue_height
    for d in np.linspace(15.0, 2500.0, 10):
        d3d = math.hypot(d, dz)
        assert pathloss(d, d3d, 7.125e9, False, LAYOUT) >= pathloss(d, d3d, 7.125e9, True, LAYOUT)


def test_pathloss_golden_los_100m():
    # hand evaluation of the adopted closed form at fc=7.125 GHz, hBS 25, hUT 1.5:
    # d_bp = 4*24*0.5*7.125e9/3e8 = 1140 m > 100 m, so
    # PL = 28 + 22*log10(d3d) + 20*log10(7.125), d3d = hypot(100, 23.5)
    d3d = math.hypot(100.0, 23.5)
    golden = 28.0 + 22.0 * math.log10(d3d) + 20.0 * math.log10(7.125)
    assert pathloss(100.0, d3d, 7.125e9, True, LAYOUT) == pytest.approx(golden, abs=1e-9)
    assert golden == pytest.approx(89.3124932, abs=1e-6)


def test_pathloss_rejects_bad_geometry():
    with pytest.raises(ValueError):
        pathloss(100.0, 50.0, 7.125e9, True, LAYOUT)


GEOM = LinkGeometry(d2d=150.0, d3d=float(math.hypot(150.0, 23.5)),
                    aod_az=12.0, aod_zen=99.0, aoa_az=-4.0, aoa_zen=81.0)
PARAMS = ChannelParams()


def test_cluster_powers_normalized_and_delays_sorted():
    for seed in range(20):
        for los in (False, True):
            cs = generate_clusters(GEOM, PARAMS, los, seed)
            assert cs.powers.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(cs.powers > 0)
            assert np.all(cs.delays_s >= 0)
            assert np.all(np.diff(cs.delays_s) >= 0)


def test_cluster_determinism():
    a = generate_clusters(GEOM, PARAMS, True, 42)
    b = generate_clusters(GEOM, PARAMS, True, 42)
    for f in ("powers", "delays_s", "aod_az", "ray_phases", "ray_aoa_az_off"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = generate_clusters(GEOM, PARAMS, True, 43)
    assert not np.array_equal(a.ray_phases, c.ray_phases)


def test_rician_k20_first_cluster_dominates():
    params = ChannelParams(rician_k_db_mean=20.0, rician_k_db_std=0.0)
    cs = generate_clusters(GEOM, params, True, 5)
    # K/(K+1) with K = 100: specular cluster carries ~0.990 of the power
    spec_cluster = int(cs.ray_cluster[cs.ray_specular][0])
    assert cs.powers[spec_cluster] > 0.9
    assert cs.delays_s[spec_cluster] == 0.0
    assert cs.aod_az[spec_cluster] == pytest.approx(GEOM.aod_az)


BS_SMALL = ArrayConfig(port_cols=4, port_rows=2, dual_polarized=True, subarray_len=3)
UE4 = array_preset("ue4")


def test_channel_matrix_dims():
    bs = build_array(BS_SMALL)
    ue = build_array(UE4)
    cs = generate_clusters(GEOM, PARAMS, False, 1, pathloss_db=90.0)
    cm = channel_matrix(cs, bs, ue, n_rbs=11, rb_bandwidth=2e6)
    assert cm.h.shape == (11, ue.n_ports, bs.n_ports)
    assert np.all(np.isfinite(cm.h))


def test_single_ray_single_pol_rank_one():
    bs = build_array(ArrayConfig(port_cols=4, port_rows=2, dual_polarized=False, subarray_len=1))
    ue = build_array(ArrayConfig(port_cols=2, port_rows=2, dual_polarized=False, subarray_len=1,
                                 elem_gain_max=0.0, elem_hpbw_az=360.0, elem_hpbw_zen=360.0,
                                 downtilt=0.0))
    params = ChannelParams(n_clusters=1, rays_per_cluster=1)
    cs = generate_clusters(GEOM, params, False, 2)
    cm = channel_matrix(cs, bs, ue, n_rbs=5, rb_bandwidth=2e6)
    for f in range(5):
        sv = np.linalg.svd(cm.h[f], compute_uv=False)
        assert sv[0] > 0
        assert sv[1] / sv[0] < 1e-12


def test_frequency_selectivity_iff_distinct_delays():
    bs = build_array(BS_SMALL)
    ue = build_array(UE4)
    cs = generate_clusters(GEOM, PARAMS, False, 9)
    flat = generate_clusters(GEOM, PARAMS, False, 9)
    flat.delays_s = np.zeros_like(flat.delays_s)
    cm_sel = channel_matrix(cs, bs, ue, n_rbs=8, rb_bandwidth=2e6)
    cm_flat = channel_matrix(flat, bs, ue, n_rbs=8, rb_bandwidth=2e6)
    assert np.allclose(cm_flat.h, cm_flat.h[0][None], atol=1e-12)
    assert not np.allclose(cm_sel.h, cm_sel.h[0][None], atol=1e-9)


def test_ensemble_norm_matches_large_scale_gain():
    # Monte-Carlo oracle: mean ||H||_F^2 / (n_rx n_tx) tracks the linear
    # large-scale gain within 0.5 dB over 1000 seeds
    bs = build_array(BS_SMALL)
    ue = build_array(UE4)
    ratios = []
    for seed in range(1000):
        cs = generate_clusters(GEOM, PARAMS, seed % 3 == 0, seed, pathloss_db=75.0,
                               shadowing_db=0.0)
        cm = channel_matrix(cs, bs, ue, n_rbs=4, rb_bandwidth=2e6)
        lsg = 10.0 ** (cm.large_scale_gain_db / 10.0)
        ratios.append(np.mean(np.abs(cm.h) ** 2) / lsg)
    db = 10.0 * np.log10(np.mean(ratios))
    assert abs(db) < 0.5


def test_wideband_covariance_tracks_realized():
    bs = build_array(BS_SMALL)
    ue = build_array(UE4)
    cs = generate_clusters(GEOM, PARAMS, False, 77, pathloss_db=80.0)
    cm = channel_matrix(cs, bs, ue, n_rbs=64, rb_bandwidth=2e6)
    realized = np.einsum("fij,fkj->ik", cm.h, np.conj(cm.h)) / cm.h.shape[0]
    analytic = wideband_rx_covariance(cs, bs, ue)
    err = np.linalg.norm(realized - analytic) / np.linalg.norm(realized)
    assert err < 0.25  # cross-cluster delay terms average out over the band


def test_link_geometry_uses_wraparound_image():
    layout = NetworkLayout(isd=200.0)
    cell = layout.cells()[0]
    # UE far outside the cluster: nearest wraparound image must be closer
    ue_pos = np.array([2.3 * 200.0, 0.3 * 200.0])
    g = link_geometry(cell, ue_pos, 0.0, layout)
    assert g.d2d < np.hypot(*ue_pos)


def test_substream_stability():
    a = substream(123, "clusters", 0, 4, 2).normal(size=5)
    b = substream(123, "clusters", 0, 4, 2).normal(size=5)
    c = substream(123, "clusters", 0, 4, 3).normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
