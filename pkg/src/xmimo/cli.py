"""Command-line entry point: run campaigns, compare reports, analyze link dumps.

Exit codes: 0 ok, 1 runtime failure, 2 usage/config error. The default output
root comes from the XMIMO_OUT environment variable (falling back to
./xmimo_out). Seeds are mandatory in configs; there is no wall-clock default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from .analysis import (DEFAULT_AZ_GRID, DEFAULT_ZEN_GRID, associate_layers,
                       detect_clusters, export_association, export_beams,
                       export_clusters, export_heatmap, power_angular_profile)
from .arrays import build_array, dft_codebook
from .campaign import (CampaignConfig, ConfigError, apply_overrides, compare,
                       config_from_dict, report_from_dict, run_campaign,
                       write_compare_csv)
from .formats import SchemaError, read_link_dump
from .precoding import Precoder, dft_beam_assignment, wideband_tx_covariance

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _out_root() -> str:
    return os.environ.get("XMIMO_OUT", "xmimo_out")


def load_config_dict(spec: str) -> dict:
    """Load a config from a path, or from the packaged presets by name."""
    if os.path.exists(spec):
        with open(spec) as f:
            return json.load(f)
    name = os.path.splitext(os.path.basename(spec))[0]
    ref = resources.files("xmimo").joinpath(f"presets/{name}.json")
    if ref.is_file():
        return json.loads(ref.read_text())
    raise ConfigError("config", f"no such config file or preset: {spec!r}")


def cmd_run(args) -> int:
    try:
        raw = load_config_dict(args.config)
        raw = apply_overrides(raw, args.set or [])
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = config_from_dict(raw)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        print(f"config error: invalid JSON at line {e.lineno}: {e.msg}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or os.path.join(_out_root(), cfg.scenario)
    try:
        report = run_campaign(cfg, threads=args.threads, out_dir=out_dir)
    except Exception as e:  # deliberate: runtime failures map to exit 1
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"scenario {report.scenario}: mean UE tput {report.mean_ue_tput_bps / 1e6:.3f} Mbps, "
          f"5%-tile {report.p5_ue_tput_bps / 1e6:.3f} Mbps, "
          f"avg layers {report.avg_scheduled_layers:.3f} "
          f"({report.n_decisions} decisions)")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        print("compare needs at least two report files", file=sys.stderr)
        return EXIT_CONFIG
    reports = []
    for path in args.reports:
        try:
            with open(path) as f:
                reports.append(report_from_dict(json.load(f)))
        except FileNotFoundError:
            print(f"missing report file: {path}", file=sys.stderr)
            return EXIT_RUNTIME
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            print(f"bad report file {path}: {e}", file=sys.stderr)
            return EXIT_CONFIG
    baseline = args.baseline
    if baseline is None:
        baseline = 0
    elif baseline.isdigit():
        baseline = int(baseline)
    try:
        rows = compare(reports, baseline)
    except ValueError as e:
        print(f"compare error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    header = ["scenario", "bs_array", "ue_array", "isd", "ues_per_cell",
              "avg_ue_tput_rel_pct", "p5_ue_tput_rel_pct", "avg_scheduled_layers",
              "cell_tput_rel_pct"]
    print(" | ".join(f"{h:>20s}" for h in header))
    for row in rows:
        print(" | ".join(f"{row[h]:>20.4g}" if isinstance(row[h], float)
                         else f"{str(row[h]):>20s}" for h in header))
    out_dir = args.out or _out_root()
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "compare.csv")
    write_compare_csv(rows, out_path)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        dump = read_link_dump(args.dump)
    except FileNotFoundError:
        print(f"missing dump file: {args.dump}", file=sys.stderr)
        return EXIT_RUNTIME
    except SchemaError as e:
        print(f"dump error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if dump["bs_array"] is None:
        print("dump error: bs_array block is required for angular analysis", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or os.path.join(_out_root(), "analysis")
    os.makedirs(out_dir, exist_ok=True)
    try:
        bs_geom = build_array(dump["bs_array"])
        h = dump["h"]
        profile = power_angular_profile(h, bs_geom,
                                        az_grid=DEFAULT_AZ_GRID, zen_grid=DEFAULT_ZEN_GRID)
        clusters = detect_clusters(profile, threshold_db=args.threshold_db,
                                   min_separation=args.min_sep)
        cb_cfg = dump["bs_array"]
        port_d_v = cb_cfg.subarray_len * cb_cfg.elem_spacing_v
        codebook = dft_codebook(cb_cfg.port_cols, cb_cfg.port_rows, args.o1, args.o2,
                                spacing_h=cb_cfg.elem_spacing_h, spacing_v=port_d_v)
        if dump["beam_ids"] is not None:
            prec = Precoder(matrix=dump["precoder_matrix"],
                            layer_power=np.full(len(dump["beam_ids"]),
                                                1.0 / len(dump["beam_ids"])),
                            beam_ids=dump["beam_ids"], beam_pols=dump["beam_pols"])
        else:
            cov = wideband_tx_covariance(h)
            prec = dft_beam_assignment(cov, codebook, bs_geom.pol_groups(), args.layers)
        layer_map = associate_layers(prec, codebook, clusters)
        export_heatmap(profile, os.path.join(out_dir, "heatmap.csv"))
        export_beams(layer_map, os.path.join(out_dir, "beams.csv"))
        export_clusters(clusters, os.path.join(out_dir, "clusters.csv"),
                        delays_s=dump["cluster_delays_s"])
        export_association(layer_map, os.path.join(out_dir, "association.csv"))
    except (ValueError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"found {clusters.n_clusters} cluster(s); outputs written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmimo",
                                description="7 GHz extreme-MIMO system-level simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a campaign from a config file or preset")
    pr.add_argument("--config", required=True, help="config path or packaged preset name")
    pr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (dotted paths allowed)")
    pr.add_argument("--out", help="output directory (default $XMIMO_OUT/<scenario>)")
    pr.add_argument("--threads", type=int, default=None,
                    help="drop workers (default: machine parallelism)")
    pr.add_argument("--seed", type=int, default=None, help="override the config seed")
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("compare", help="relative table across report.json files")
    pc.add_argument("reports", nargs="+", help="report.json paths")
    pc.add_argument("--baseline", default=None,
                    help="baseline scenario name or report index (default: first)")
    pc.add_argument("--out", help="directory for compare.csv")
    pc.set_defaults(func=cmd_compare)

    pa = sub.add_parser("analyze", help="angular analysis of a link dump")
    pa.add_argument("dump", help="link dump JSON path")
    pa.add_argument("--out", help="output directory")
    pa.add_argument("--layers", type=int, default=8, help="layers when no precoder in dump")
    pa.add_argument("--o1", type=int, default=4, help="horizontal codebook oversampling")
    pa.add_argument("--o2", type=int, default=4, help="vertical codebook oversampling")
    pa.add_argument("--threshold-db", type=float, default=-12.0, dest="threshold_db")
    pa.add_argument("--min-sep", type=float, default=5.0, dest="min_sep",
                    help="minimum peak separation in degrees")
    pa.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
