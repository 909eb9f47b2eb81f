"""File formats: link dumps, campaign reports, CSV helpers.

All numeric output is decimal with 9 significant digits (see docs/formats.md
for the field-by-field schemas). Readers validate the schema version and
report the offending location on malformed input.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from typing import Any

import numpy as np

from .arrays import ArrayConfig
from .channel import ClusterSet, ChannelMatrix

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Malformed or unsupported input file; message carries location context."""


def fmt(x) -> str:
    """Decimal with 9 significant digits."""
    return f"{float(x):.9g}"


def round9(obj):
    """Recursively round floats to 9 significant digits for JSON output."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, (np.floating, float)):
        return float(fmt(obj))
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [round9(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round9(v) for v in obj]
    return obj


def write_json(path: str, obj: dict) -> None:
    with open(path, "w") as f:
        json.dump(round9(obj), f, indent=2)
        f.write("\n")


def write_json_atomic(path: str, obj: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(round9(obj), f, indent=2)
        f.write("\n")
    os.replace(tmp, path)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                             for v in row) + "\n")


def config_hash(config_dict: dict) -> str:
    """Platform-stable hash of a canonicalized config dictionary."""
    canon = json.dumps(round9(config_dict), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _interleave(m: np.ndarray) -> list[float]:
    """Complex matrix to row-major interleaved real/imag floats."""
    flat = np.asarray(m, dtype=complex).ravel()
    out = np.empty(flat.size * 2)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def _deinterleave(vals, shape, where: str) -> np.ndarray:
    arr = np.asarray(vals, dtype=float)
    if arr.size != 2 * int(np.prod(shape)):
        raise SchemaError(f"{where}: expected {2 * int(np.prod(shape))} floats, got {arr.size}")
    return (arr[0::2] + 1j * arr[1::2]).reshape(shape)


def array_config_to_dict(cfg: ArrayConfig) -> dict:
    return dataclasses.asdict(cfg)


def array_config_from_dict(d: dict, where: str = "bs_array") -> ArrayConfig:
    try:
        return ArrayConfig(**d)
    except TypeError as e:
        raise SchemaError(f"{where}: {e}") from None


def clusters_to_dict(cs: ClusterSet) -> dict:
    return {
        "powers": cs.powers, "delays_s": cs.delays_s,
        "aod_az": cs.aod_az, "aod_zen": cs.aod_zen,
        "aoa_az": cs.aoa_az, "aoa_zen": cs.aoa_zen,
        "ray_cluster": cs.ray_cluster,
        "ray_aod_az_off": cs.ray_aod_az_off, "ray_aod_zen_off": cs.ray_aod_zen_off,
        "ray_aoa_az_off": cs.ray_aoa_az_off, "ray_aoa_zen_off": cs.ray_aoa_zen_off,
        "ray_phases": cs.ray_phases.reshape(-1, 4),
        "ray_specular": cs.ray_specular.astype(int),
        "xpr_db": cs.xpr_db, "los_flag": bool(cs.los_flag),
        "k_factor_db": cs.k_factor_db if np.isfinite(cs.k_factor_db) else None,
        "pathloss_db": cs.pathloss_db, "shadowing_db": cs.shadowing_db,
    }


def write_link_dump(path: str, chan: ChannelMatrix, bs_config: ArrayConfig,
                    clusters: ClusterSet | None = None, precoder=None) -> None:
    """One-file-per-link dump of per-RB channel matrices (see docs/formats.md)."""
    n_rbs, n_rx, n_tx = chan.h.shape
    obj: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "kind": "xmimo-link-dump",
        "link_id": chan.link_id,
        "rb_bandwidth_hz": chan.rb_bandwidth,
        "n_rb_groups": n_rbs,
        "n_rx_ports": n_rx,
        "n_tx_ports": n_tx,
        "large_scale_gain_db": chan.large_scale_gain_db,
        "bs_array": array_config_to_dict(bs_config),
        "h_rb": [_interleave(chan.h[f]) for f in range(n_rbs)],
    }
    if clusters is not None:
        obj["clusters"] = clusters_to_dict(clusters)
    if precoder is not None:
        obj["precoder"] = {
            "matrix": _interleave(precoder.matrix),
            "n_layers": precoder.n_layers,
            "layer_power": precoder.layer_power,
            "beam_ids": precoder.beam_ids,
            "beam_pols": precoder.beam_pols,
        }
    write_json(path, obj)


def read_link_dump(path: str) -> dict:
    """Parse and validate a link dump; returns a dict with numpy payloads."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}") from None
    if not isinstance(raw, dict) or raw.get("kind") != "xmimo-link-dump":
        raise SchemaError(f"{path}: not an xmimo-link-dump file")
    ver = raw.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema_version {ver!r} is not readable by this build "
                          f"(expected {SCHEMA_VERSION})")
    for key in ("rb_bandwidth_hz", "n_rb_groups", "n_rx_ports", "n_tx_ports", "h_rb"):
        if key not in raw:
            raise SchemaError(f"{path}: missing required field '{key}'")
    n_rbs = int(raw["n_rb_groups"])
    n_rx = int(raw["n_rx_ports"])
    n_tx = int(raw["n_tx_ports"])
    if not isinstance(raw["h_rb"], list) or len(raw["h_rb"]) != n_rbs:
        raise SchemaError(f"{path}: h_rb must list {n_rbs} RB groups")
    h = np.empty((n_rbs, n_rx, n_tx), dtype=complex)
    for f_idx, vals in enumerate(raw["h_rb"]):
        h[f_idx] = _deinterleave(vals, (n_rx, n_tx), f"{path}: h_rb[{f_idx}]")
    out = {
        "link_id": raw.get("link_id", "link"),
        "rb_bandwidth_hz": float(raw["rb_bandwidth_hz"]),
        "h": h,
        "large_scale_gain_db": float(raw.get("large_scale_gain_db", 0.0)),
        "bs_array": None,
        "precoder_matrix": None,
        "beam_ids": None,
        "beam_pols": None,
        "cluster_delays_s": None,
    }
    if "bs_array" in raw:
        out["bs_array"] = array_config_from_dict(raw["bs_array"], f"{path}: bs_array")
    if "precoder" in raw:
        p = raw["precoder"]
        n_l = int(p["n_layers"])
        out["precoder_matrix"] = _deinterleave(p["matrix"], (n_tx, n_l), f"{path}: precoder.matrix")
        if p.get("beam_ids") is not None:
            out["beam_ids"] = np.asarray(p["beam_ids"], dtype=int)
        if p.get("beam_pols") is not None:
            out["beam_pols"] = np.asarray(p["beam_pols"], dtype=int)
    if "clusters" in raw and raw["clusters"] is not None:
        out["cluster_delays_s"] = np.asarray(raw["clusters"]["delays_s"], dtype=float)
    return out
