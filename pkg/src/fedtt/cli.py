"""Command-line entry point: ``fedtt gen-data | impute | transfer | eval``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 protocol violation.
Set ``FEDTT_LOG`` (e.g. ``INFO``, ``DEBUG``) to raise log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import CheckpointError, load_predictor, save_adapter, save_predictor, save_tvi
from .config import ConfigError, ExperimentConfig, config_to_dict, load_config
from .data import (DataError, EmptyInputError, TrafficSeries, make_windows, mae, read_readings_csv,
                   split_series, synthesize_multi_city, write_readings_csv)
from .fpt import ClientData, FederationConfig, FederationError, TargetData, no_transfer_baseline, \
    run_federation
from .graph import NetworkError, RoadNetwork, read_adjacency_csv, shortest_distance_matrix, write_adjacency_csv
from .predictor import evaluate
from .tst import ProtocolError, dump_transcript
from .tvi import fit_tvi, hide_readings, impute_with, mean_fill
from .wire import WireError

log = logging.getLogger("fedtt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PROTOCOL = 0, 2, 3, 4
MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# Datasets on disk
# ---------------------------------------------------------------------------

@dataclass
class CityData:
    name: str
    role: str
    network: RoadNetwork
    series: TrafficSeries


def read_manifest(data_dir: Path) -> dict:
    path = data_dir / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc.get("cities"), list) or not doc["cities"]:
        raise DataError(f"{path}: no cities listed")
    return doc


def load_dataset(data_dir: Path) -> tuple[dict, list[CityData]]:
    manifest = read_manifest(data_dir)
    cities = []
    for entry in manifest["cities"]:
        d = data_dir / entry["name"]
        m = int(entry["sensors"])
        try:
            net = read_adjacency_csv(d / "adjacency.csv", m)
            series = read_readings_csv(d / "readings.csv", m)
        except OSError as exc:
            raise DataError(f"city {entry['name']}: {exc.strerror}: {exc.filename}") from None
        if len(series) != int(entry["frames"]):
            raise DataError(f"city {entry['name']}: manifest lists {entry['frames']} frames, found {len(series)}")
        cities.append(CityData(entry["name"], entry.get("role", "source"), net, series))
    return manifest, cities


def write_city(root: Path, name: str, network: RoadNetwork, series: TrafficSeries, imputed: bool = False) -> None:
    d = root / name
    d.mkdir(parents=True, exist_ok=True)
    write_adjacency_csv(network, d / "adjacency.csv")
    write_readings_csv(series, d / "readings.csv", imputed_column=imputed)


def write_manifest(root: Path, seed: int, cities: list[CityData], **extra) -> None:
    doc = {"seed": seed, **extra,
           "cities": [{"name": c.name, "role": c.role, "sensors": c.series.sensor_count,
                       "frames": len(c.series)} for c in cities]}
    (root / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _data_dir(cfg: ExperimentConfig) -> Path:
    if cfg.data_dir is None:
        raise ConfigError("data_dir is required (set it in the config or pass --data)")
    return Path(cfg.data_dir)


def select_roles(cfg: ExperimentConfig, cities: list[CityData]) -> tuple[list[CityData], CityData]:
    by_name = {c.name: c for c in cities}
    target_name = cfg.target or next((c.name for c in cities if c.role == "target"), None)
    if target_name is None:
        raise ConfigError("no target city: set 'target' or mark one in the manifest")
    if target_name not in by_name:
        raise ConfigError(f"target city {target_name!r} is not in the dataset")
    source_names = cfg.sources or [c.name for c in cities if c.name != target_name]
    missing = [s for s in source_names if s not in by_name]
    if missing:
        raise ConfigError(f"source cities not in the dataset: {missing}")
    if target_name in source_names:
        raise ConfigError("the target city cannot also be a source")
    return [by_name[s] for s in source_names], by_name[target_name]


def target_splits(cfg: ExperimentConfig, target: CityData):
    train, val, test, _ = split_series(target.series, cfg.split)
    return train, val, test


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig) -> int:
    syn = cfg.synthesis.build()
    out = Path(cfg.out)
    cities = synthesize_multi_city(syn, cfg.seed)
    k = len(cities)
    rows = [CityData(f"city{i}", "target" if i == k - 1 else "source", c.network, c.series)
            for i, c in enumerate(cities)]
    out.mkdir(parents=True, exist_ok=True)
    for c in rows:
        write_city(out, c.name, c.network, c.series)
    write_manifest(out, cfg.seed, rows, synthesis=config_to_dict(cfg)["synthesis"])
    print(f"wrote {k} cities to {out}")
    return EXIT_OK


def cmd_impute(cfg: ExperimentConfig) -> int:
    data_dir = _data_dir(cfg)
    manifest, cities = load_dataset(data_dir)
    out = Path(cfg.out)
    tvi_cfg = cfg.impute.build(cfg.seed)
    lines = []
    results = []
    for i, c in enumerate(cities):
        dist = shortest_distance_matrix(c.network)
        # score on readings hidden from a copy, then impute the real gaps
        probe, hidden = hide_readings(c.series, cfg.impute.evaluation_rate, cfg.seed + i)
        model = fit_tvi(probe, dist, tvi_cfg)
        if hidden.any():
            scored = impute_with(model, probe, dist, cfg.seed)
            tvi_mae = mae(scored.values[hidden], c.series.values[hidden])
            base_mae = mae(mean_fill(probe).values[hidden], c.series.values[hidden])
            lines += [f"{c.name}.hidden = {int(hidden.sum())}", f"{c.name}.tvi_mae = {tvi_mae!r}",
                      f"{c.name}.mean_fill_mae = {base_mae!r}"]
        completed = impute_with(model, c.series, dist, cfg.seed)
        lines.append(f"{c.name}.imputed = {int((~c.series.availability).sum())}")
        results.append((c, model, completed))
    out.mkdir(parents=True, exist_ok=True)
    done = []
    for c, model, completed in results:
        write_city(out, c.name, c.network, completed, imputed=True)
        save_tvi(model, out / c.name / "tvi.ckpt")
        done.append(CityData(c.name, c.role, c.network, completed))
    write_manifest(out, manifest.get("seed", cfg.seed), done, imputed=True)
    (out / "impute_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def build_federation(cfg: ExperimentConfig) -> tuple[FederationConfig, list[CityData], CityData]:
    _, cities = load_dataset(_data_dir(cfg))
    sources, target = select_roles(cfg, cities)
    train, _, test = target_splits(cfg, target)
    fed = FederationConfig([ClientData(c.series, c.network) for c in sources],
                           TargetData(train, test, target.network),
                           deterministic=cfg.deterministic, seed=cfg.seed, **cfg.federation.options())
    return fed.validate(), sources, target


def cmd_transfer(cfg: ExperimentConfig) -> int:
    fed, sources, target = build_federation(cfg)
    out = Path(cfg.out)
    run = run_federation(fed)
    _, baseline = no_transfer_baseline(fed)
    timings = not cfg.deterministic
    out.mkdir(parents=True, exist_ok=True)
    base_lines = [f"baseline.{k}.{name} = {float(v)!r}"
                  for k in ("mae", "rmse", "mae_final", "rmse_final")
                  for name, v in zip(("flow", "speed", "occupancy"), getattr(baseline, k))]
    text = run.report.to_text(timings) + "\n".join(base_lines) + "\n"
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(run.report.to_json(timings))
    (out / "transcript.bin").write_bytes(dump_transcript(run.transcript))
    save_predictor(run.predictor, out / "predictor.ckpt", run.server.domain.level)
    for c, state in zip(sources, run.clients):
        save_adapter(out / f"adapter_{c.name}.ckpt", state.tb, state.gen, state.dis)
    print(run.report.metrics.table())
    ours, theirs = run.report.metrics.overall_mae(), baseline.overall_mae()
    print(f"mean MAE {ours:.4f} vs no-transfer {theirs:.4f} ({100 * (1 - ours / theirs):+.1f}%)")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, checkpoint: str, split: str) -> int:
    try:
        model, level = load_predictor(checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint}: {exc.strerror}") from None
    _, cities = load_dataset(_data_dir(cfg))
    _, target = select_roles(cfg, cities)
    parts = dict(zip(("train", "val", "test"), target_splits(cfg, target)))
    series = parts[split]
    m = target.series.sensor_count
    weights = getattr(model, "weights", None)
    if weights is not None and weights.shape[0] != m:
        raise DataError(f"checkpoint expects {weights.shape[0]} sensors, target city has {m}")
    if len(level) != target.series.feature_count:
        raise DataError("checkpoint level does not match the feature count")
    result = evaluate(model, make_windows(series, model.history, model.horizon), level)
    print(result.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="fixed reduction order; omit timings from reports")
    common.add_argument("--data", help="dataset directory (overrides data_dir)")

    parser = argparse.ArgumentParser(prog="fedtt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="synthesise multi-city datasets")
    sub.add_parser("impute", parents=[common], help="complete missing readings and save imputers")
    sub.add_parser("transfer", parents=[common], help="run the federation and write the report")
    ev = sub.add_parser("eval", parents=[common], help="score a predictor checkpoint on the target city")
    ev.add_argument("--checkpoint", required=True, help="predictor checkpoint (FTP1)")
    ev.add_argument("--split", choices=("train", "val", "test"), default="test")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("FEDTT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"out": args.out, "seed": args.seed,
                                        "deterministic": args.deterministic, "data_dir": args.data})
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "impute":
            return cmd_impute(cfg)
        if args.command == "transfer":
            return cmd_transfer(cfg)
        return cmd_eval(cfg, args.checkpoint, args.split)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EmptyInputError, NetworkError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ProtocolError, WireError) as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except FederationError as exc:
        if isinstance(exc.cause, (ProtocolError, WireError)):
            print(f"protocol violation: {exc}", file=sys.stderr)
            return EXIT_PROTOCOL
        if isinstance(exc.cause, (DataError, EmptyInputError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
