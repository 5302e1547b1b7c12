"""Command-line entry point: ``bleedsense <subcommand> [--seed N] [--config FILE] [--out DIR]``.

Every subcommand resolves its parameters from built-in defaults, then the
JSON ``--config`` file, then explicit flags, and writes the result to
``<out>/resolved_config.json``. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, energy, telemetry
from .sim import DatasetBundle, DatasetConfig, FlowClass, generate_dataset, physics_check, read_recording_csv
from .tinynn.estimator import ModelSchemaError, TinyCNNClassifier
from .tinynn.metrics import evaluate, export_features, report_from_predictions

log = logging.getLogger("bleedsense")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CLASS_NAMES = tuple(fc.label for fc in FlowClass)

TRAIN_DEFAULTS = {
    "learning_rate": 1e-3,
    "batch_size": 32,
    "max_epochs": 100,
    "patience": 10,
    "preprocess": "log_centered",
    "input_clip": 4.0,
    "validation_fraction": 0.15,
    "train_stride": 1,
}
ENERGY_DEFAULTS = {"infer_case": "case1", "tx_case": "case2", "n_infer": 9, "n_tx": 1,
                   "battery_mah": 40.0, "use_reference_totals": True}
DEFAULT_SEEDS = {"gen": 42, "train": 0}


class UsageError(Exception):
    pass


# -- config plumbing ------------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def _resolve(defaults: dict, cfg: dict, overrides: dict) -> dict:
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {**defaults, **cfg}
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _write_resolved(out: Path, command: str, seed, params: dict, inputs: dict | None = None) -> None:
    snapshot = {"command": command, "version": __version__, "seed": seed, "params": params, "inputs": inputs or {}}
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")


def _seed(args) -> int:
    return args.seed if args.seed is not None else DEFAULT_SEEDS.get(args.command, 0)


def _out(args) -> Path:
    return Path(args.out) if args.out else Path("runs") / args.command


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _load_dataset(path: str) -> DatasetBundle:
    return DatasetBundle.load(_require(path, "dataset directory"))


def _load_model(path: str) -> TinyCNNClassifier:
    return TinyCNNClassifier.load(_require(path, "model file"))


# -- subcommands ------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = args.cfg
    seed = _seed(args)
    try:
        config = DatasetConfig.from_dict({**cfg, **({"recordings_per_class": args.recordings_per_class}
                                                     if args.recordings_per_class else {})})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad dataset config: {exc}") from exc
    out = _out(args)
    bundle = generate_dataset(config, seed)
    bundle.save(out)
    _write_resolved(out, "gen", seed, config.to_dict())
    counts = {s: sum(r.split == s for r in bundle.manifest) for s in ("train", "val", "test")}
    print(f"wrote {len(bundle.recordings)} recordings ({len(FlowClass)} classes) to {out}; splits {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    params = _resolve(TRAIN_DEFAULTS, args.cfg, {"max_epochs": args.max_epochs})
    seed = _seed(args)
    bundle = _load_dataset(args.data)
    out = _out(args)
    X, y, _ = bundle.arrays("train", stride=params["train_stride"])
    X_val, y_val, _ = bundle.arrays("val")
    hyper = {k: v for k, v in params.items() if k != "train_stride"}
    clf = TinyCNNClassifier(random_state=seed, **hyper)
    clf.fit(X, y, X_val, y_val)
    out.mkdir(parents=True, exist_ok=True)
    clf.save(out / "model.json")
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(clf.history_[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(clf.history_)
    _write_resolved(out, "train", seed, params, {"data": str(args.data), "master_seed": bundle.master_seed})
    best = clf.history_[clf.best_epoch_ - 1]
    print(f"best epoch {clf.best_epoch_}: val_acc={best.get('val_acc', float('nan')):.4f}; model -> {out / 'model.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = _load_dataset(args.data)
    clf = _load_model(args.model)
    out = _out(args)
    params = _resolve({"split": "test"}, args.cfg, {"split": args.split})
    X, y, _ = bundle.arrays(params["split"])
    report = evaluate(clf, X, y, CLASS_NAMES)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.csv").write_text(report.confusion_csv())
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _write_resolved(out, "eval", args.seed, params, {"data": str(args.data), "model": str(args.model)})
    print(report.summary_line())
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .quant import footprint_report, save_qmodel
    from .quant import quantize as run_quantize

    bundle = _load_dataset(args.data)
    clf = _load_model(args.model)
    out = _out(args)
    params = _resolve({"calibration_split": "train", "calibration_stride": 1}, args.cfg,
                      {"calibration_split": args.calibration_split})
    X_cal, _, _ = bundle.arrays(params["calibration_split"], stride=params["calibration_stride"])
    qm = run_quantize(clf, X_cal)
    out.mkdir(parents=True, exist_ok=True)
    save_qmodel(qm, out / "model.bsq8")
    fp = footprint_report(qm)
    report = {**qm.report, "footprint": fp.__dict__}
    (out / "quant_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write_resolved(out, "quantize", args.seed, params,
                    {"data": str(args.data), "model": str(args.model)})
    print(f"int8 model -> {out / 'model.bsq8'}; params={fp.param_count} macs={fp.macs} "
          f"calibration_agreement={qm.report['calibration_top1_agreement']:.4f}")
    return EXIT_OK


def cmd_qeval(args) -> int:
    from .quant import QuantizedTinyCNN, load_qmodel

    bundle = _load_dataset(args.data)
    clf = _load_model(args.model)
    qclf = QuantizedTinyCNN.from_qmodel(load_qmodel(_require(args.qmodel, "quantized model")))
    out = _out(args)
    params = _resolve({"split": "test"}, args.cfg, {"split": args.split})
    X, y, ids = bundle.arrays(params["split"])
    f_pred = clf.predict(X)
    q_logits = qclf.decision_function(X)
    q_pred = np.argmax(q_logits, axis=1)
    agreement = float(np.mean(f_pred == q_pred))
    report = report_from_predictions(y, q_pred, CLASS_NAMES)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion_int8.csv").write_text(report.confusion_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recording_id", "label", "float_pred", "int8_pred", *(f"logit{k}" for k in range(q_logits.shape[1]))])
    for rid, t, fp_, qp, row in zip(ids, y, f_pred, q_pred, q_logits):
        w.writerow([rid, int(t), int(fp_), int(qp), *(repr(float(v)) for v in row)])
    (out / "int8_predictions.csv").write_text(buf.getvalue())
    summary = {"agreement": agreement, "n_windows": int(len(y)), **report.to_dict()}
    (out / "qeval.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_resolved(out, "qeval", args.seed, params,
                    {"data": str(args.data), "model": str(args.model), "qmodel": str(args.qmodel)})
    print(f"agreement={agreement:.4f}, int8 {report.summary_line()}")
    return EXIT_OK


def cmd_physics_check(args) -> int:
    out = _out(args)
    params = _resolve({"duration_s": 120.0, "sample_period_s": 1.0}, args.cfg, {})
    times, series, passed = physics_check(params["duration_s"], params["sample_period_s"])
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", *(f"ratio_Q{fc.label}" for fc in series)])
    for k, t in enumerate(times):
        w.writerow([repr(float(t)), *(repr(float(s[k])) for s in series.values())])
    (out / "ratio_series.csv").write_text(buf.getvalue())
    _write_resolved(out, "physics-check", args.seed, params)
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_energy_report(args) -> int:
    params = _resolve(ENERGY_DEFAULTS, args.cfg,
                      {"n_infer": args.n_infer, "n_tx": args.n_tx, "infer_case": args.infer_case,
                       "tx_case": args.tx_case})
    cases = energy.load_cases(args.cases)
    by_name = {c.name: c for c in cases}
    for key in ("infer_case", "tx_case"):
        if params[key] not in by_name:
            raise energy.CasesFileError(f"case {params[key]!r} not in cases file (have {sorted(by_name)})")
    summaries = [energy.cycle_energy(c) for c in cases]
    cmp = energy.scenario_compare(by_name[params["infer_case"]], by_name[params["tx_case"]],
                                  params["n_infer"], params["n_tx"], use_reference=params["use_reference_totals"])
    infer_total = energy.cycle_energy(by_name[params["infer_case"]]).total_energy
    lifetime = energy.battery_lifetime(infer_total, params["battery_mah"])
    table = energy.energy_table_csv(summaries)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "energy_table.csv").write_text(table)
    result = {"energy_mixed_uAh": cmp.energy_mixed, "energy_all_tx_uAh": cmp.energy_all_tx,
              "reduction": cmp.reduction, "battery_lifetime_h": lifetime,
              "mismatched_cases": [s.name for s in summaries if s.mismatch]}
    (out / "scenario.json").write_text(json.dumps(result, indent=2) + "\n")
    _write_resolved(out, "energy-report", args.seed, params, {"cases": args.cases or "<builtin>"})
    print(table, end="")
    for s in summaries:
        if s.mismatch:
            print(f"warning: {s.name} computed total {s.total_energy:.6g} uAh differs from reference "
                  f"{s.reference_total_energy} by {s.relative_mismatch:.2%}")
    print(f"{cmp.n_infer} x {params['infer_case']} + {cmp.n_tx} x {params['tx_case']}: "
          f"{cmp.energy_mixed:.4f} uAh vs {cmp.energy_all_tx:.4f} uAh all-transmit; "
          f"reduction={cmp.reduction:.1%}")
    print(f"battery lifetime ({params['battery_mah']} mAh, {params['infer_case']} every minute): {lifetime:.0f} h")
    return EXIT_OK


def cmd_export_features(args) -> int:
    bundle = _load_dataset(args.data)
    clf = _load_model(args.model)
    out = _out(args)
    params = _resolve({"split": "test"}, args.cfg, {"split": args.split})
    X, y, ids = bundle.arrays(params["split"])
    mix = bundle.mixture_of()
    text = export_features(clf, X, y, [mix[r] for r in ids], ids)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features.csv").write_text(text)
    _write_resolved(out, "export-features", args.seed, params,
                    {"data": str(args.data), "model": str(args.model)})
    print(f"{len(y)} embeddings -> {out / 'features.csv'}")
    return EXIT_OK


def cmd_encode(args) -> int:
    src = _require(args.recording, "recording")
    times, values = read_recording_csv(src)
    period = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / (src.stem + ".bspk")
    telemetry.save_packed(dest, times, values, period)
    _write_resolved(out, "encode", args.seed, {}, {"recording": str(args.recording)})
    print(f"{len(times)} frames ({dest.stat().st_size} bytes) -> {dest}")
    return EXIT_OK


def cmd_decode(args) -> int:
    src = _require(args.input, "input file")
    buf = src.read_bytes()
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    if buf[:4] == telemetry.FILE_MAGIC:
        packed = telemetry.unpack_recording(buf)
        dest = out / (src.stem + ".csv")
        lines = ["t_s," + ",".join(f"ch{k}" for k in range(1, 25))]
        for t, row in zip(packed.timestamps_s, packed.values):
            lines.append(",".join([repr(float(t)), *(repr(float(v)) for v in row)]))
        dest.write_text("\n".join(lines) + "\n")
        n = len(packed.frames)
    else:
        frames = telemetry.decode_stream(buf)
        dest = out / (src.stem + "_frames.csv")
        lines = ["seq,timestamp_ms,kind,class,confidence_q8," + ",".join(f"ch{k}" for k in range(1, 25))]
        for f in frames:
            ch = list(f.channels) if f.payload_kind == telemetry.KIND_RAW else [""] * 24
            cls_ = f.class_id if f.payload_kind == telemetry.KIND_RESULT else ""
            conf = f.confidence_q8 if f.payload_kind == telemetry.KIND_RESULT else ""
            lines.append(",".join(str(v) for v in [f.seq, f.timestamp_ms, f.payload_kind, cls_, conf, *ch]))
        dest.write_text("\n".join(lines) + "\n")
        n = len(frames)
    _write_resolved(out, "decode", args.seed, {}, {"input": str(args.input)})
    print(f"{n} frames -> {dest}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (gen: dataset seed, train: init seed)")
    common.add_argument("--config", default=None, help="JSON file of parameters for this subcommand")
    common.add_argument("--out", default=None, help="output directory (default runs/<subcommand>)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bleedsense", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--recordings-per-class", type=int, default=None)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("train", parents=[common], help="train the float classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--max-epochs", type=int, default=None)
    s.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a float model"),
                              ("export-features", cmd_export_features, "write 64-d penultimate features")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--data", required=True)
        s.add_argument("--model", required=True)
        s.add_argument("--split", choices=("train", "val", "test"), default=None)
        s.set_defaults(func=func)

    s = sub.add_parser("quantize", parents=[common], help="int8 post-training quantization")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--calibration-split", choices=("train", "val", "test"), default=None)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("qeval", parents=[common], help="compare int8 and float decisions")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--qmodel", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default=None)
    s.set_defaults(func=cmd_qeval)

    s = sub.add_parser("physics-check", parents=[common], help="noise-free ch1/ch12 ratio check")
    s.set_defaults(func=cmd_physics_check)

    s = sub.add_parser("energy-report", parents=[common], help="duty-cycle energy table and trade-off")
    s.add_argument("--cases", default=None, help="cases CSV (default: built-in table)")
    s.add_argument("--infer-case", default=None)
    s.add_argument("--tx-case", default=None)
    s.add_argument("--n-infer", type=int, default=None)
    s.add_argument("--n-tx", type=int, default=None)
    s.set_defaults(func=cmd_energy_report)

    s = sub.add_parser("encode", parents=[common], help="pack a recording CSV into telemetry frames")
    s.add_argument("--recording", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="decode a packed recording or frame stream")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_decode)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.cfg = _load_config(args.config)
        return args.func(args)
    except UsageError as exc:
        print(f"bleedsense {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelSchemaError as exc:
        print(f"bleedsense {args.command}: schema error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError, KeyError, ArithmeticError) as exc:
        print(f"bleedsense {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
