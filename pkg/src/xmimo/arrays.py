"""Antenna panel geometries, steering vectors, element patterns and DFT codebooks.

Coordinate convention: the panel sits in the y-z plane with boresight along +x.
Azimuth 0 deg = boresight, positive toward +y. Zenith is measured from +z, so
zenith 90 deg = horizon. All angle I/O is in degrees.

A "port" is one digital transceiver chain; it drives a vertical subarray of
`subarray_len` physical elements through fixed complex virtualization weights
(equal magnitude, progressive phase steering the subarray to the electrical
downtilt). Dual-polarized panels expose two co-located port groups with +45
and -45 deg slants; ports are ordered polarization-group major, then column
major with the vertical index fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Propagation-model convention (also used for breakpoint distances in the
# path-loss formulas): keep a single speed-of-light constant everywhere.
C_LIGHT = 3.0e8

PATTERN_FLOOR_DB = 30.0  # max attenuation relative to element peak gain


@dataclass(frozen=True)
class ArrayConfig:
    """Static description of a rectangular panel."""

    port_cols: int
    port_rows: int
    dual_polarized: bool
    subarray_len: int
    elem_spacing_h: float = 0.5  # wavelengths
    elem_spacing_v: float = 0.5  # wavelengths
    carrier_freq: float = 7.125e9  # Hz
    elem_gain_max: float = 8.0  # dBi
    elem_hpbw_az: float = 65.0  # degrees; >= 360 means isotropic
    elem_hpbw_zen: float = 65.0  # degrees
    downtilt: float = 6.0  # degrees, electrical (via subarray weights)

    @property
    def n_pol(self) -> int:
        return 2 if self.dual_polarized else 1

    @property
    def n_ports(self) -> int:
        return self.port_cols * self.port_rows * self.n_pol

    @property
    def n_elements(self) -> int:
        return self.n_ports * self.subarray_len

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.carrier_freq

    def validate(self) -> None:
        if self.port_cols < 1 or self.port_rows < 1:
            raise ValueError("port grid dimensions must be >= 1")
        if self.subarray_len < 1:
            raise ValueError("subarray_len must be >= 1")
        if self.elem_spacing_h <= 0 or self.elem_spacing_v <= 0:
            raise ValueError("element spacings must be positive")
        if self.carrier_freq <= 0:
            raise ValueError("carrier_freq must be positive")


@dataclass
class ArrayGeometry:
    """Realized panel: element positions plus the port virtualization map.

    element_positions are in meters in the panel-local frame. port_elements
    holds, for each port, the indices of its elements; port_weights the
    matching unit-L2-norm virtualization weights. is_uniform_grid marks
    geometries produced by build_array, which unlocks a separable fast path
    in steering_matrix (identical values, far fewer transcendentals).
    """

    config: ArrayConfig
    element_positions: np.ndarray  # (n_elements, 3) meters
    element_slant_deg: np.ndarray  # (n_elements,)
    port_elements: np.ndarray  # (n_ports, subarray_len) int
    port_weights: np.ndarray  # (n_ports, subarray_len) complex
    port_slant_deg: np.ndarray  # (n_ports,)
    is_uniform_grid: bool = False

    @property
    def n_ports(self) -> int:
        return self.port_elements.shape[0]

    @property
    def n_elements(self) -> int:
        return self.element_positions.shape[0]

    def pol_groups(self) -> list[np.ndarray]:
        """Port indices per polarization group, +45 (or 0) first."""
        slants = np.unique(self.port_slant_deg)[::-1]
        return [np.flatnonzero(self.port_slant_deg == s) for s in slants]


def build_array(config: ArrayConfig) -> ArrayGeometry:
    """Lay out the element grid and the port-to-element virtualization.

    Elements of one column are stacked along z with spacing elem_spacing_v;
    columns step along y with spacing elem_spacing_h. Port (col i, row j)
    owns the subarray_len consecutive element rows starting at j*subarray_len.
    Dual-polarized elements are co-located pairs with +/-45 deg slants.
    """
    config.validate()
    lam = config.wavelength
    n_elem_rows = config.port_rows * config.subarray_len
    slants = (45.0, -45.0) if config.dual_polarized else (0.0,)

    positions = []
    slant_of_elem = []
    port_elements = []
    port_weights = []
    port_slants = []

    # Progressive phase steering the subarray to zenith (90 + downtilt),
    # centered on the subarray so the weight sum stays real (conjugate
    # symmetric), with equal magnitudes and unit L2 norm per port.
    tilt_cos = np.cos(np.radians(90.0 + config.downtilt))
    k_idx = np.arange(config.subarray_len)
    centered = k_idx - (config.subarray_len - 1) / 2.0
    w_sub = np.exp(-2j * np.pi * config.elem_spacing_v * centered * tilt_cos)
    w_sub = w_sub / np.sqrt(config.subarray_len)

    elem_index = 0
    for slant in slants:
        for col in range(config.port_cols):
            for row in range(config.port_rows):
                idx = []
                for k in range(config.subarray_len):
                    erow = row * config.subarray_len + k
                    positions.append(
                        (0.0, col * config.elem_spacing_h * lam, erow * config.elem_spacing_v * lam)
                    )
                    slant_of_elem.append(slant)
                    idx.append(elem_index)
                    elem_index += 1
                port_elements.append(idx)
                port_weights.append(w_sub)
                port_slants.append(slant)

    geom = ArrayGeometry(
        config=config,
        element_positions=np.asarray(positions, dtype=float),
        element_slant_deg=np.asarray(slant_of_elem, dtype=float),
        port_elements=np.asarray(port_elements, dtype=int),
        port_weights=np.asarray(port_weights, dtype=complex),
        port_slant_deg=np.asarray(port_slants, dtype=float),
        is_uniform_grid=True,
    )
    assert geom.n_elements == config.n_elements == n_elem_rows * config.port_cols * config.n_pol
    assert geom.n_ports == config.n_ports
    return geom


def unit_direction(az_deg, zen_deg) -> np.ndarray:
    """Unit propagation vector(s) for (azimuth, zenith) in degrees; (..., 3)."""
    az = np.radians(np.asarray(az_deg, dtype=float))
    zen = np.radians(np.asarray(zen_deg, dtype=float))
    sz = np.sin(zen)
    return np.stack([sz * np.cos(az), sz * np.sin(az), np.cos(zen)], axis=-1)


def _pol_group_span(geom: ArrayGeometry, ports: np.ndarray | None):
    """Detect a whole-polarization-group (or whole single-pol panel) selection."""
    pg = geom.config.port_cols * geom.config.port_rows
    if ports is None:
        return 0 if geom.config.n_pol == 1 else None
    if len(ports) != pg:
        return None
    for g in range(geom.config.n_pol):
        if ports[0] == g * pg and np.array_equal(ports, np.arange(g * pg, (g + 1) * pg)):
            return g
    return None


def steering_matrix(
    geom: ArrayGeometry, az_deg, zen_deg, ports: np.ndarray | None = None
) -> np.ndarray:
    """Port-level array response for a batch of directions.

    Entry [d, p] = sum over elements e of port p of w_e * exp(j*2*pi/lambda *
    k(az_d, zen_d) . x_e). Returns shape (n_dirs, n_ports_selected); scalar
    direction inputs still produce a leading batch axis of length 1.
    """
    cfg = geom.config
    lam = cfg.wavelength
    k = np.atleast_2d(unit_direction(az_deg, zen_deg))  # (D, 3)
    if geom.is_uniform_grid:
        g = _pol_group_span(geom, ports)
        if g is not None:
            # separable grid: response = (column phase) x (subarray-folded row phase)
            y = np.arange(cfg.port_cols) * cfg.elem_spacing_h * lam
            z = np.arange(cfg.port_rows * cfg.subarray_len) * cfg.elem_spacing_v * lam
            py = np.exp(2j * np.pi / lam * np.outer(k[:, 1], y))  # (D, cols)
            pz = np.exp(2j * np.pi / lam * np.outer(k[:, 2], z))  # (D, elem rows)
            w = geom.port_weights[0]
            pv = pz.reshape(-1, cfg.port_rows, cfg.subarray_len) @ w  # (D, rows)
            return (py[:, :, None] * pv[:, None, :]).reshape(len(k), -1)
    phase = np.exp(2j * np.pi / lam * (k @ geom.element_positions.T))  # (D, E)
    if ports is None:
        elems = geom.port_elements
        weights = geom.port_weights
    else:
        elems = geom.port_elements[ports]
        weights = geom.port_weights[ports]
    # (D, P, L) gather then weighted sum over the subarray axis
    return np.einsum("dpl,pl->dp", phase[:, elems], weights)


def port_steering_vector(geom: ArrayGeometry, azimuth: float, zenith: float) -> np.ndarray:
    """Array response over all ports for one direction (degrees)."""
    if not 0.0 < zenith < 180.0:
        raise ValueError(f"zenith must lie in (0, 180) deg, got {zenith}")
    return steering_matrix(geom, azimuth, zenith)[0]


def element_pattern_gain(azimuth, zenith, config: ArrayConfig):
    """Element gain in dBi: parabolic-in-dB rolloff, floored 30 dB below peak.

    HPBW >= 360 deg declares an isotropic element (used for UE presets).
    Vectorized over azimuth/zenith.
    """
    az = np.asarray(azimuth, dtype=float)
    zen = np.asarray(zenith, dtype=float)
    if config.elem_hpbw_az >= 360.0 and config.elem_hpbw_zen >= 360.0:
        return np.broadcast_to(np.asarray(config.elem_gain_max), np.broadcast(az, zen).shape).copy()
    az = (az + 180.0) % 360.0 - 180.0
    att = 12.0 * (az / config.elem_hpbw_az) ** 2 + 12.0 * ((zen - 90.0) / config.elem_hpbw_zen) ** 2
    return config.elem_gain_max - np.minimum(att, PATTERN_FLOOR_DB)


@dataclass
class Codebook:
    """Oversampled 2D DFT beam grid over one polarization group's port grid."""

    beams: np.ndarray  # (n_beams, n1*n2) unit-norm rows
    n1: int
    n2: int
    o1: int
    o2: int
    beam_angles: np.ndarray  # (n_beams, 2) nominal (azimuth, zenith) degrees

    @property
    def n_beams(self) -> int:
        return self.beams.shape[0]

    def beam_index(self, m1: int, m2: int) -> int:
        return m1 * (self.n2 * self.o2) + m2

    def orthogonal_subgroup(self, r1: int = 0, r2: int = 0) -> np.ndarray:
        """Indices of the mutually orthogonal beams with oversampling offset (r1, r2)."""
        m1 = np.arange(self.n1 * self.o1)
        m2 = np.arange(self.n2 * self.o2)
        sel1 = m1[m1 % self.o1 == r1 % self.o1]
        sel2 = m2[m2 % self.o2 == r2 % self.o2]
        return np.array([self.beam_index(a, b) for a in sel1 for b in sel2])


def dft_codebook(
    n1: int, n2: int, o1: int, o2: int, spacing_h: float = 0.5, spacing_v: float = 0.5
) -> Codebook:
    """Kronecker 2D DFT codebook with oversampling.

    n1/n2 are the horizontal/vertical port-grid dimensions of one polarization
    group; spacings are the PORT spacings in wavelengths (vertical port spacing
    of a virtualized panel is subarray_len * element spacing). Beam (m1, m2)
    applies per-column phase 2*pi*m1/(n1*o1) and per-row phase 2*pi*m2/(n2*o2);
    its nominal angle solves the matching plane-wave spatial frequencies
        sin(zen)*sin(az) = m1~ / (n1*o1*spacing_h),
        cos(zen)         = m2~ / (n2*o2*spacing_v),
    with m~ the alias-centered index. Port ordering matches build_array
    (column major, vertical index fastest).
    """
    if min(n1, n2, o1, o2) < 1:
        raise ValueError("codebook dimensions and oversampling factors must be >= 1")
    beams = np.empty((n1 * o1 * n2 * o2, n1 * n2), dtype=complex)
    angles = np.empty((n1 * o1 * n2 * o2, 2))
    cols = np.arange(n1)
    rows = np.arange(n2)
    for m1 in range(n1 * o1):
        d1 = np.exp(2j * np.pi * cols * m1 / (n1 * o1)) / np.sqrt(n1)
        m1c = m1 if m1 < n1 * o1 / 2 else m1 - n1 * o1
        u = m1c / (n1 * o1 * spacing_h)
        for m2 in range(n2 * o2):
            d2 = np.exp(2j * np.pi * rows * m2 / (n2 * o2)) / np.sqrt(n2)
            m2c = m2 if m2 < n2 * o2 / 2 else m2 - n2 * o2
            w = np.clip(m2c / (n2 * o2 * spacing_v), -1.0, 1.0)
            zen = np.degrees(np.arccos(w))
            sz = np.sin(np.radians(zen))
            az = np.degrees(np.arcsin(np.clip(u / sz, -1.0, 1.0))) if sz > 1e-12 else 0.0
            b = m1 * (n2 * o2) + m2
            beams[b] = np.kron(d1, d2)
            angles[b] = (az, zen)
    return Codebook(beams=beams, n1=n1, n2=n2, o1=o1, o2=o2, beam_angles=angles)


# Named panel presets. BS panels use the macro element assumption (8 dBi,
# 65 deg HPBW); UE arrays are isotropic 0 dBi with no virtualization. The
# x-panels re-use the 5G 64-port footprint with 4x denser elements at 7 GHz.
ARRAY_PRESETS: dict[str, ArrayConfig] = {
    "5g64": ArrayConfig(port_cols=8, port_rows=4, dual_polarized=True, subarray_len=3,
                        carrier_freq=3.5e9),
    "x256": ArrayConfig(port_cols=16, port_rows=8, dual_polarized=True, subarray_len=3),
    "x128": ArrayConfig(port_cols=8, port_rows=8, dual_polarized=True, subarray_len=6),
    "ue4": ArrayConfig(port_cols=2, port_rows=1, dual_polarized=True, subarray_len=1,
                       elem_gain_max=0.0, elem_hpbw_az=360.0, elem_hpbw_zen=360.0, downtilt=0.0),
    "ue8": ArrayConfig(port_cols=4, port_rows=1, dual_polarized=True, subarray_len=1,
                       elem_gain_max=0.0, elem_hpbw_az=360.0, elem_hpbw_zen=360.0, downtilt=0.0),
}


def array_preset(name: str, carrier_freq: float | None = None) -> ArrayConfig:
    """Look up a named preset, optionally rebinding the carrier frequency."""
    try:
        cfg = ARRAY_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown array preset '{name}' (have {sorted(ARRAY_PRESETS)})") from None
    if carrier_freq is not None:
        cfg = replace(cfg, carrier_freq=carrier_freq)
    return cfg
