import numpy as np
import pytest

from xmimo.arrays import (ArrayConfig, array_preset, build_array, dft_codebook,
                          element_pattern_gain, port_steering_vector,
                          steering_matrix, unit_direction)


@pytest.mark.parametrize("name,ports,elements", [
    ("x256", 256, 768),
    ("5g64", 64, 192),
    ("x128", 128, 768),
])
def test_port_element_counting_identities(name, ports, elements):
    cfg = array_preset(name)
    assert cfg.n_ports == ports
    assert cfg.n_elements == elements
    geom = build_array(cfg)
    assert geom.n_ports == ports
    assert geom.n_elements == elements


def test_every_element_belongs_to_exactly_one_port():
    geom = build_array(array_preset("x256"))
    flat = geom.port_elements.ravel()
    assert len(flat) == geom.n_elements
    assert len(np.unique(flat)) == geom.n_elements


def test_port_weights_unit_norm():
    for name in ("x256", "x128", "ue8"):
        geom = build_array(array_preset(name))
        norms = np.linalg.norm(geom.port_weights, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)


def test_build_array_rejects_bad_config():
    with pytest.raises(ValueError):
        build_array(ArrayConfig(port_cols=4, port_rows=2, dual_polarized=True, subarray_len=0))
    with pytest.raises(ValueError):
        build_array(ArrayConfig(port_cols=4, port_rows=2, dual_polarized=True,
                                subarray_len=1, elem_spacing_h=-0.5))


def test_boresight_steering_equal_phase_within_pol_group():
    cfg = ArrayConfig(port_cols=16, port_rows=8, dual_polarized=True,
                      subarray_len=3, downtilt=0.0)
    geom = build_array(cfg)
    a = port_steering_vector(geom, 0.0, 90.0)
    for group in geom.pol_groups():
        ph = np.angle(a[group])
        assert np.allclose(ph, ph[0], atol=1e-12)
        # zero path-length differences: full coherent subarray gain
        assert np.allclose(np.abs(a[group]), np.sqrt(cfg.subarray_len), atol=1e-12)


def test_negated_azimuth_gives_conjugate_at_horizon():
    # symmetric geometry: centered subarray weights keep the identity for any tilt
    geom = build_array(array_preset("x256"))
    a_pos = port_steering_vector(geom, 25.0, 90.0)
    a_neg = port_steering_vector(geom, -25.0, 90.0)
    assert np.allclose(a_neg, np.conj(a_pos), atol=1e-10)


def test_steering_matches_element_level_brute_force():
    # az 10 deg, zen 95 deg on the 256-port panel, element-by-element sum
    geom = build_array(array_preset("x256"))
    az, zen = 10.0, 95.0
    lam = geom.config.wavelength
    k = unit_direction(az, zen)
    expected = np.zeros(geom.n_ports, dtype=complex)
    for p in range(geom.n_ports):
        acc = 0.0 + 0.0j
        for e, w in zip(geom.port_elements[p], geom.port_weights[p]):
            x = geom.element_positions[e]
            acc += w * np.exp(2j * np.pi / lam * (k @ x))
        expected[p] = acc
    got = port_steering_vector(geom, az, zen)
    assert np.allclose(got, expected, atol=1e-10)


def test_steering_norm_sqrt_ports_without_virtualization():
    # unit-magnitude entries when each port is a single element
    geom = build_array(array_preset("ue8"))
    for az, zen in [(0.0, 90.0), (33.0, 75.0), (-80.0, 110.0)]:
        a = port_steering_vector(geom, az, zen)
        assert np.isclose(np.linalg.norm(a), np.sqrt(geom.n_ports), atol=1e-12)


def test_steering_rejects_zenith_out_of_range():
    geom = build_array(array_preset("ue4"))
    with pytest.raises(ValueError):
        port_steering_vector(geom, 0.0, 0.0)


def test_element_pattern_boresight_and_hpbw():
    cfg = array_preset("x256")
    assert float(element_pattern_gain(0.0, 90.0, cfg)) == pytest.approx(8.0)
    # half-power beamwidth definition: 3 dB below peak at +/- HPBW/2
    half = cfg.elem_hpbw_az / 2
    assert float(element_pattern_gain(half, 90.0, cfg)) == pytest.approx(8.0 - 3.0)
    assert float(element_pattern_gain(-half, 90.0, cfg)) == pytest.approx(8.0 - 3.0)


def test_element_pattern_back_lobe_floored():
    cfg = array_preset("x256")
    # 12*(180/65)^2 = 92 dB parabolic attenuation, floored at 30 dB below peak
    assert float(element_pattern_gain(180.0, 90.0, cfg)) == pytest.approx(8.0 - 30.0)


def test_element_pattern_even_in_azimuth_max_at_boresight():
    cfg = array_preset("x256")
    az = np.linspace(-179.0, 179.0, 359)
    g = element_pattern_gain(az, 90.0, cfg)
    assert np.allclose(g, g[::-1], atol=1e-12)
    assert np.argmax(g) == len(az) // 2


def test_isotropic_ue_pattern():
    cfg = array_preset("ue8")
    g = element_pattern_gain(np.array([0.0, 90.0, 180.0]), np.array([60.0, 90.0, 120.0]), cfg)
    assert np.allclose(g, 0.0)


def test_dft_codebook_two_point():
    cb = dft_codebook(2, 1, 1, 1, 0.5, 0.5)
    assert cb.n_beams == 2
    expected = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    assert np.allclose(sorted(cb.beams.tolist(), key=lambda b: b[1].real),
                       sorted(expected.tolist(), key=lambda b: b[1].real), atol=1e-12)


def test_dft_codebook_16x8_orthogonal():
    cb = dft_codebook(16, 8, 1, 1, 0.5, 1.5)
    assert cb.n_beams == 128
    gram = np.conj(cb.beams) @ cb.beams.T
    assert np.max(np.abs(gram - np.eye(128))) < 1e-10


def test_dft_subgroup_gram_identity_with_oversampling():
    cb = dft_codebook(8, 4, 4, 4, 0.5, 1.5)
    assert cb.n_beams == 8 * 4 * 16
    assert np.max(np.abs(np.linalg.norm(cb.beams, axis=1) - 1.0)) < 1e-12
    for r1, r2 in [(0, 0), (1, 3), (3, 2)]:
        sub = cb.orthogonal_subgroup(r1, r2)
        assert len(sub) == 32
        gram = np.conj(cb.beams[sub]) @ cb.beams[sub].T
        assert np.max(np.abs(gram - np.eye(32))) < 1e-10


def test_beam_nominal_angle_attains_grid_maximum():
    # flat panel (no virtualization) so the beam is an exact steering vector:
    # the codebook's nominal angle must beat every 1-degree grid point
    cfg = ArrayConfig(port_cols=8, port_rows=4, dual_polarized=True, subarray_len=1,
                      downtilt=0.0)
    geom = build_array(cfg)
    group = geom.pol_groups()[0]
    cb = dft_codebook(8, 4, 2, 2, cfg.elem_spacing_h, cfg.elem_spacing_v)
    az_grid = np.arange(-90.0, 91.0, 1.0)
    zen_grid = np.arange(1.0, 180.0, 1.0)
    zz, aa = np.meshgrid(zen_grid, az_grid, indexing="ij")
    steer = steering_matrix(geom, aa.ravel(), zz.ravel(), ports=group)
    rng = np.random.default_rng(3)
    usable = [b for b in range(cb.n_beams) if 0.5 < cb.beam_angles[b][1] < 179.5]
    for b in rng.choice(usable, size=12, replace=False):
        az0, zen0 = cb.beam_angles[b]
        a0 = port_steering_vector(geom, az0, zen0)[group]
        val0 = np.abs(np.vdot(cb.beams[b], a0))
        grid_vals = np.abs(steer @ np.conj(cb.beams[b]))
        assert val0 >= np.max(grid_vals) - 1e-9
