"""``fedwater`` command line: synth, train, eval, personalize, forecast, netload.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import federation
from .exceptions import DataError, FedWaterError
from .experiment import (
    ExperimentSpec,
    clients_from_spec,
    evaluate_model,
    evaluate_persistence,
    round_evaluator,
)
from .ingest import SyntheticFleetConfig, generate_synthetic_fleet, write_consumption_csv
from .lstm import ModelWeights, forecast_horizon, init_weights
from .federation import TrainingLog
from .netload import Topology, data_length, model_length, netload_report
from .series import denormalize

logger = logging.getLogger("fedwater")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(FedWaterError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def parse_column_mapping(text: str | None) -> dict[str, str] | None:
    """``"building_id=Development Name,consumption=Consumption (HCF)"``."""
    if not text:
        return None
    mapping = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise UsageError(f"bad --csv-columns entry {item!r}; expected logical=column")
        mapping[key.strip()] = value.strip()
    return mapping


def load_spec(args) -> ExperimentSpec:
    if not args.spec:
        raise UsageError("--spec is required for this command")
    spec = ExperimentSpec.load(args.spec)
    if args.seed is not None:
        spec = replace(spec, init_seed=args.seed, rounds=replace(spec.rounds, rng_seed=args.seed))
    columns = parse_column_mapping(args.csv_columns)
    if columns:
        spec = replace(spec, columns={**(spec.columns or {}), **columns})
    return spec


def _out_dir(args, spec: ExperimentSpec | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if spec is not None:
        return Path(spec.out)
    return Path(".")


def _find_client(clients, client_id: str):
    for c in clients:
        if c.client_id == client_id:
            return c
    raise DataError(f"unknown client {client_id!r}; known: {[c.client_id for c in clients]}")


def cmd_synth(args) -> int:
    if not args.config:
        raise UsageError("synth needs --config")
    config = SyntheticFleetConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, rng_seed=args.seed)
    out = Path(args.out or "fleet.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        write_consumption_csv(generate_synthetic_fleet(config), fh)
    logger.info("wrote %d buildings to %s", config.n_buildings, out)
    return EXIT_OK


def cmd_train(args) -> int:
    spec = load_spec(args)
    out = _out_dir(args, spec)
    out.mkdir(parents=True, exist_ok=True)
    clients = clients_from_spec(spec)
    initial = init_weights(spec.hidden_size, spec.init_seed)

    if args.mode == "federated":
        evaluator = round_evaluator(clients) if not args.no_round_eval else None
        weights, log = federation.run_federated(
            clients, spec.rounds, initial, evaluate=evaluator, max_workers=args.threads
        )
        log.save(out / "log.jsonl")
    else:
        weights = federation.run_centralized(
            clients, spec.rounds.eta, spec.centralized_epoch_count, initial, spec.rounds.clip_norm
        )
    weights.save(out / "model.json")

    report = evaluate_model(weights, clients)
    payload = {"mode": args.mode, **report.to_dict(),
               "persistence": evaluate_persistence(clients).aggregate.to_dict()}
    _write_json(out / "eval.json", payload)
    print(json.dumps({"mode": args.mode, **report.aggregate.to_dict()}))
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = load_spec(args)
    weights = ModelWeights.load(args.model)
    clients = clients_from_spec(spec)
    payload = {**evaluate_model(weights, clients).to_dict(),
               "persistence": evaluate_persistence(clients).aggregate.to_dict()}
    if args.out:
        _write_json(Path(args.out), payload)
    print(json.dumps(payload["aggregate"]))
    return EXIT_OK


def cmd_personalize(args) -> int:
    spec = load_spec(args)
    weights = ModelWeights.load(args.model)
    client = _find_client(clients_from_spec(spec), args.client)
    epochs = spec.personalize_epoch_count if args.epochs is None else args.epochs
    personal = federation.personalize(
        weights, client, spec.personalize_learning_rate, epochs, spec.rounds.clip_norm
    )
    out = _out_dir(args, spec)
    out.mkdir(parents=True, exist_ok=True)
    personal.save(out / f"personalized_{client.client_id}.json")
    report = {
        "client_id": client.client_id,
        "epochs": epochs,
        "global": evaluate_model(weights, [client]).aggregate.to_dict(),
        "personalized": evaluate_model(personal, [client]).aggregate.to_dict(),
    }
    _write_json(out / f"personalize_{client.client_id}.json", report)
    print(json.dumps(report))
    return EXIT_OK


def cmd_forecast(args) -> int:
    spec = load_spec(args)
    weights = ModelWeights.load(args.model)
    client = _find_client(clients_from_spec(spec), args.client)
    if client.train_normalized.size < spec.lookback:
        raise DataError(f"client {client.client_id!r} has fewer than {spec.lookback} months")
    predicted = denormalize(forecast_horizon(weights, client.seed_window, args.horizon), client.params)
    out = Path(args.out) if args.out else None
    sink = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["month", "actual", "predicted"])
        for k in range(args.horizon):
            actual = repr(float(client.test_values[k])) if k < client.test_values.size else ""
            writer.writerow([str(client.test_start + k), actual, repr(float(predicted[k]))])
    finally:
        if out:
            sink.close()
    return EXIT_OK


def cmd_netload(args) -> int:
    spec = load_spec(args)
    log = TrainingLog.load(args.log)
    if args.model_bytes is not None:
        ell_g = args.model_bytes
    elif args.model:
        ell_g = model_length(ModelWeights.load(args.model))
    else:
        raise UsageError("netload needs --model or --model-bytes")
    clients = clients_from_spec(spec)
    if args.topology:
        topology = Topology.load(args.topology)
    elif spec.topology:
        topology = Topology.load(spec.topology)
    else:
        topology = Topology({c.client_id: c.hops for c in clients})
    lengths = {c.client_id: data_length(c) for c in clients}
    report = netload_report(lengths, log, ell_g, topology, args.netload_accounting,
                            use_logged_hops=not args.topology)
    if args.out:
        _write_json(Path(args.out), report.to_dict())
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", help="experiment spec JSON")
    common.add_argument("--seed", type=int, help="override the spec's rng seeds")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threads", type=int, default=1, help="parallel local updates per round")
    common.add_argument("--netload-accounting", choices=("single", "bidirectional"), default="bidirectional",
                        help="count one model transfer per participation, or download plus upload")
    common.add_argument("--csv-columns", help="logical=column pairs, comma separated")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fedwater", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fleet CSV")
    p.add_argument("--config", help="SyntheticFleetConfig JSON")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a federated or centralized model")
    p.add_argument("--mode", choices=("federated", "centralized"), default="federated")
    p.add_argument("--no-round-eval", action="store_true",
                   help="skip per-round global evaluation in the log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on the test spans")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("personalize", parents=[common], help="fine-tune for one client")
    p.add_argument("--model", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("forecast", parents=[common], help="emit a forecast CSV for one client")
    p.add_argument("--model", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("netload", parents=[common], help="network-load report for a run")
    p.add_argument("--log", required=True)
    p.add_argument("--model")
    p.add_argument("--model-bytes", type=int, help="override the global model length")
    p.add_argument("--topology")
    p.set_defaults(func=cmd_netload)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    if getattr(args, "horizon", 1) < 1:
        parser.error("--horizon must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fedwater: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FedWaterError as exc:
        print(f"fedwater: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"fedwater: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"fedwater: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
