"""Command line front end: gen-data, train, eval, energy, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, network, training
from .energy import EnergyCostTable, HardwareModel, emac_estimate, energy_cnn_ca, energy_snn_ca, energy_snn_nda
from .network import NetworkSpec, build_pair, default_spec, load_model, save_model
from .sweep import DEFAULT_MERS, bucket_profile, normalize_report, report_is_finite, sweep_report

log = logging.getLogger("snnlab")

DEFAULT_RHOS = (0.35, 0.51, 0.59, 0.65, 0.69, 0.85, 0.87, 0.90, 0.95, 0.99)


class CliError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_spec(args) -> NetworkSpec:
    if args.spec:
        return NetworkSpec.load(args.spec)
    return default_spec()


def _load_models(args, spec: NetworkSpec):
    """Checkpoints when given, otherwise a freshly seeded untrained pair."""
    snn0, cnn0 = build_pair(spec, args.seed)
    snn = load_model(args.snn) if args.snn else snn0
    cnn = load_model(args.cnn) if args.cnn else cnn0
    for m, want in ((snn, "snn"), (cnn, "cnn")):
        if m.mode != want:
            raise CliError(f"checkpoint holds a {m.mode} model where {want} was expected")
    if args.spec and (snn.spec.layers != spec.layers or cnn.spec.layers != spec.layers):
        raise CliError("checkpoint geometry does not match --spec")
    return snn, cnn


def cmd_gen_data(args) -> int:
    manifest = data.gen_dataset(args.n, args.size, args.size, _floats(args.rho), args.noise,
                                args.seed, args.out)
    print(f"wrote {len(manifest.items)} images and manifest.json to {args.out}")
    return 0


def cmd_train(args) -> int:
    spec = _load_spec(args)
    cfg = training.TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum,
                               batch_size=args.batch_size, seed=args.seed,
                               learn_beta=not args.fixed_beta)
    ds = data.DatasetManifest.load(args.manifest).load_dataset()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "spec.json")
    snn, cnn = build_pair(spec, args.seed)
    for model in (snn, cnn) if args.model == "both" else ((snn,) if args.model == "snn" else (cnn,)):
        trained, history = training.train(model, ds, cfg)
        path = out / f"{model.mode}.ckpt"
        save_model(trained, path)
        metrics = {"loss_history": history, "final_train_mse": training.evaluate_mse(trained, ds),
                   "betas": trained.betas.tolist()}
        _write_json(out / f"{model.mode}.ckpt.json", {"train_config": cfg.to_json(), "metrics": metrics})
        print(f"{model.mode}: final train MSE {metrics['final_train_mse']:.6g} -> {path}")
    return 0


def eval_table(models: dict, splits: dict) -> dict:
    return {name: {split: training.evaluate_mse(m, ds) for split, ds in splits.items()}
            for name, m in models.items()}


def cmd_eval(args) -> int:
    splits = {}
    for spec_arg in args.manifest:
        name, _, path = spec_arg.rpartition("=")
        splits[name or Path(path).parent.name] = data.DatasetManifest.load(path).load_dataset()
    models = {}
    if args.cnn:
        models["CNN"] = load_model(args.cnn)
    if args.snn:
        models["SNN"] = load_model(args.snn)
    if not models:
        raise CliError("eval needs --snn and/or --cnn checkpoints")
    table = eval_table(models, splits)
    header = ["model"] + list(splits)
    print("\t".join(header))
    for name, row in table.items():
        print("\t".join([name] + [f"{row[s]:.6g}" for s in splits]))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "eval.json", table)
    return 0


def cmd_energy(args) -> int:
    """Per-layer energy breakdown over all images of a manifest."""
    spec = _load_spec(args)
    snn, cnn = _load_models(args, spec)
    costs = EnergyCostTable.load(args.costs)
    ds = data.DatasetManifest.load(args.manifest).load_dataset()
    profile = bucket_profile(snn, ds.images)
    shapes = network.layer_shapes(cnn.spec)
    ops = network.op_counts(cnn.spec)
    result = {"rho": float(np.mean(ds.rho)),
              "profile": profile.to_json(),
              "emac_cnn": emac_estimate(ops, "cnn", costs),
              "emac_snn": emac_estimate(profile, "snn", costs),
              "snn_nda": energy_snn_nda(profile, HardwareModel.nda(
                  costs, args.n_hop, fanout_movement=args.fanout_movement)).per_layer.tolist(),
              "ca": {}}
    for mer in _floats(args.mer):
        hw = HardwareModel.ca(costs, mer)
        result["ca"][f"{mer:g}"] = {"cnn": energy_cnn_ca(ops, shapes, hw).per_layer.tolist(),
                                    "snn": energy_snn_ca(profile, hw).per_layer.tolist()}
    totals = [sum(result["snn_nda"])] + [sum(v["cnn"]) + sum(v["snn"]) for v in result["ca"].values()]
    if not np.all(np.isfinite(totals)):
        print("error: non-finite energy", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "energy.json", result)
    print(f"rho={result['rho']:.3f} SNN_NDA={sum(result['snn_nda']):.6g} -> {out / 'energy.json'}")
    return 0


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    snn, cnn = _load_models(args, spec)
    costs = EnergyCostTable.load(args.costs)
    mers = _floats(args.mer)
    if not mers or any(not 0 < m <= 1 for m in mers):
        raise CliError("--mer values must lie in (0, 1]")
    ds = data.DatasetManifest.load(args.manifest).load_dataset()
    raw, profiles = sweep_report(snn, cnn, ds, costs, mers, args.n_hop,
                                 fanout_movement=args.fanout_movement)
    if not report_is_finite(raw):
        print("error: non-finite energy in report", file=sys.stderr)
        return 2
    norm = normalize_report(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(norm.to_csv())
    (out / "report_raw.csv").write_text(raw.to_csv())
    _write_json(out / "report.json", {"raw": raw.to_json(), "normalized": norm.to_json(),
                                      "profiles": [p.to_json() for p in profiles]})
    _write_json(out / "run-config.json", {
        "command": "sweep", "manifest": args.manifest, "spec": spec.to_json(),
        "snn": args.snn, "cnn": args.cnn, "seed": args.seed, "costs": costs.to_json(),
        "mer_list": mers, "n_hop": args.n_hop, "fanout_movement": args.fanout_movement})
    print(norm.to_csv(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snnlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--spec", help="network spec JSON (default: built-in desk-scale net)")
        sp.add_argument("--costs", help="energy cost table JSON (default: packaged table)")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("gen-data", help="generate synthetic PPM scenes and a manifest")
    common(sp)
    sp.add_argument("--n", type=int, default=4, help="scenes per rho value")
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--rho", default=",".join(map(str, DEFAULT_RHOS)))
    sp.add_argument("--noise", type=float, default=0.005)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the SNN/CNN pair on a manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model", choices=("snn", "cnn", "both"), default="both")
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--fixed-beta", action="store_true", help="do not learn the decay factors")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="MSE of checkpoints per split")
    common(sp, out_required=False)
    sp.add_argument("--manifest", action="append", required=True,
                    help="[split=]manifest.json, repeatable")
    sp.add_argument("--snn")
    sp.add_argument("--cnn")
    sp.set_defaults(func=cmd_eval)

    for name, func, helptext in (("energy", cmd_energy, "per-layer energy over one manifest"),
                                 ("sweep", cmd_sweep, "rho-bucketed energy report")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--snn", help="SNN checkpoint (default: untrained seeded model)")
        sp.add_argument("--cnn", help="CNN checkpoint (default: untrained seeded model)")
        sp.add_argument("--mer", default=",".join(map(str, DEFAULT_MERS)),
                        help="comma-separated internal:external ratios, e.g. 0.01 for 1:100")
        sp.add_argument("--n-hop", type=int, default=1)
        sp.add_argument("--fanout-movement", action="store_true",
                        help="scale spike movement by fan-out instead of fan-in")
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
