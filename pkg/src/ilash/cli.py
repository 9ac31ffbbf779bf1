"""Command-line entry point: ``ilash <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 search failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import encoding, energy, graph, reports, surrogate
from .config import ConfigError, load_config, parse_bool, resolve
from .heuristic import SearchError, ilash_heu
from .predictive import ilash_pred
from .trainer import (MiniTrainer, TrainConfig, TrainingError, load_dataset, save_dataset,
                      synth_dataset)

log = logging.getLogger("ilash")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SEARCH = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# shared helpers


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory written by gen-data")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--template", help="JSON list of layer specs (default: built-in template)")
    p.add_argument("--g-th", type=float, help="goodness trade-off weight in [0, 1]")
    p.add_argument("--ll", type=int, help="shallowest candidate depth")
    p.add_argument("--ul", type=int, help="deepest candidate depth")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--power-profile", help="profile name (built-in or from --profiles)")
    p.add_argument("--profiles", help="JSON power profile registry")
    p.add_argument("--pue", type=float, help="power usage effectiveness factor")
    p.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    p.add_argument("--freeze-shared", type=_bool_flag, metavar="{true,false}",
                   help="heu only: keep shared layers fixed while scoring candidates")


def _bool_flag(text):
    try:
        return parse_bool(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _settings(args) -> dict:
    file_values = load_config(args.config) if args.config else {}
    flags = {k: getattr(args, k, None) for k in
             ("g_th", "ll", "ul", "epochs", "batch_size", "learning_rate", "seed",
              "power_profile", "pue", "freeze_shared")}
    return resolve(flags, file_values)


def _profile(name, registry_path):
    try:
        registry = energy.load_profiles(registry_path) if registry_path else None
        return energy.resolve_profile(name, registry)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None


def _template(path):
    if not path:
        return graph.default_template()
    try:
        return graph.template_from_json(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad template {path}: {exc}") from None


def _dataset(path):
    try:
        return load_dataset(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from None


def _train_cfg(s: dict) -> TrainConfig:
    return TrainConfig(learning_rate=s["learning_rate"], batch_size=s["batch_size"],
                       epochs=s["epochs"], seed=s["seed"])


def _test_scores(model, data) -> dict[int, float]:
    trainer = MiniTrainer()
    return {tid: float(trainer.score(model, data, "test", data.tasks[tid])) for tid in model.heads}


def _write_run(out: Path, result, meter_report, data, settings) -> None:
    rep = reports.run_report(result, meter_report, _test_scores(result.model, data),
                             {"settings": settings})
    reports.save_report(rep, out / "report.json")
    (out / "model.json").write_text(graph.dumps(result.model))


def _dataset_labels(items):
    """``NAME=PATH`` keeps NAME; otherwise the file stem, or the parent
    directory when several files share a stem."""
    pairs = [item.split("=", 1) if "=" in item else (None, item) for item in items]
    stems = [Path(p).stem for _, p in pairs]
    out = []
    for (label, path), stem in zip(pairs, stems):
        if label is None:
            label = stem if stems.count(stem) == 1 else Path(path).resolve().parent.name
        out.append((label, path))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    if args.tasks < 1 or args.samples < 1 or args.size < 1:
        raise ConfigError("--tasks, --samples and --size must be positive")
    try:
        data = synth_dataset(tasks=args.tasks, samples=args.samples, h=args.size, w=args.size,
                             c=args.channels, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        save_dataset(data, args.out)
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from None
    print(f"wrote {args.tasks}-task dataset ({args.samples} samples) to {args.out}")
    return EXIT_OK


def cmd_run_heu(args) -> int:
    s = _settings(args)
    profile = _profile(s["power_profile"], args.profiles)
    template = _template(args.template)
    data = _dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, used = energy.meter(
        lambda: ilash_heu(template, data, data.task_list, s["ll"], s["ul"], s["g_th"],
                          cfg=_train_cfg(s), n_jobs=max(1, args.threads),
                          freeze_shared=s["freeze_shared"]),
        profile, s["pue"])
    encoding.write_csv(result.dataset, out / "ilash_dataset.csv")
    _write_run(out, result, used, data, s)
    print(f"heu: depths {result.chosen_depths()}, {result.trainer_calls} trainer calls, "
          f"{used.kwh_pue:.3g} kWh")
    return EXIT_OK


def cmd_fit_surrogate(args) -> int:
    if len(args.csv) < 2:
        raise ConfigError("fit-surrogate needs at least two --csv datasets")
    try:
        kind = surrogate.resolve_kind(args.kind)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    datasets = {}
    for label, path in _dataset_labels(args.csv):
        if label in datasets:
            raise ConfigError(f"duplicate dataset name {label!r}; use NAME=PATH")
        try:
            datasets[label] = encoding.read_csv(path, source=label)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
    held = args.hold_out
    if held not in datasets:
        raise ConfigError(f"--hold-out {held!r} is not one of {sorted(datasets)}")
    try:
        res = surrogate.leave_one_out_fit(datasets, held, kind, seed=args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    surrogate.save(res.model, out / "surrogate.json")
    metrics = {"schema_version": reports.SCHEMA_VERSION, **res.report, "held_out": res.held_out,
               "train_sources": res.train_sources, "n_train": res.n_train, "n_val": res.n_val}
    (out / "metrics.json").write_text(reports.dumps(metrics))
    print(f"{kind}: mae={res.report['mae']:.4f} rmse={res.report['rmse']:.4f} "
          f"(held out {res.held_out})")
    return EXIT_OK


def cmd_run_pred(args) -> int:
    s = _settings(args)
    profile = _profile(s["power_profile"], args.profiles)
    template = _template(args.template)
    try:
        model = surrogate.load(args.surrogate)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot use surrogate {args.surrogate}: {exc}") from None
    data = _dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, used = energy.meter(
        lambda: ilash_pred(template, model, data, data.task_list, s["ll"], s["ul"],
                           cfg=_train_cfg(s), g_th=s["g_th"]),
        profile, s["pue"])
    _write_run(out, result, used, data, s)
    print(f"pred: depths {result.chosen_depths()}, {result.surrogate_calls} surrogate calls, "
          f"{used.kwh_pue:.3g} kWh")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        heu, pred = reports.load_report(args.heu), reports.load_report(args.pred)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read report: {exc}") from None
    try:
        table = reports.compare_runs(heu, pred)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(reports.dumps(table))
    for k, v in table["ratios"].items():
        print(f"{k:>14}: {'n/a' if v is None else f'{v:.3g}'}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilash", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log search progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic multi-task dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", type=int, default=3)
    p.add_argument("--samples", type=int, default=600)
    p.add_argument("--size", type=int, default=8, help="image height and width")
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run-heu", help="exhaustive branch search; writes the branch-record CSV")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run_heu)

    p = sub.add_parser("fit-surrogate", help="leave-one-out surrogate fit over branch-record CSVs")
    p.add_argument("--csv", action="append", default=[], required=True,
                   help="branch-record CSV as PATH or NAME=PATH (repeat)")
    p.add_argument("--hold-out", required=True, help="dataset name to exclude from training")
    p.add_argument("--kind", default="dt", help="dt, rf, lr or gb")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_surrogate)

    p = sub.add_parser("run-pred", help="surrogate-guided branch search with one joint training")
    p.add_argument("--surrogate", required=True, help="surrogate.json from fit-surrogate")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run_pred)

    p = sub.add_parser("compare", help="heu vs pred ratio table")
    p.add_argument("--heu", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SearchError, TrainingError) as exc:
        print(f"search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except ValueError as exc:
        # e.g. an empty branching window
        print(f"search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH


if __name__ == "__main__":
    sys.exit(main())
