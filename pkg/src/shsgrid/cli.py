"""Command-line entry point: ``shsgrid <command> [options]``.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then command-line flags, later sources winning.  Every
command writes its artifacts, a ``manifest.json`` and a ``metrics.json``
into the output directory.  Failures exit nonzero and leave ``error.json``.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ENV_THREADS = "SHSGRID_THREADS"

DEFAULTS = {
    "network": "ieee33",
    "params": None,
    "out": "run",
    "dataset": None,
    "checkpoint": None,
    "gen": {
        "counts": [200, 200, 200],
        "base_seed": 2024,
        "dt": 0.001,
        "tau": 1.0,
        "tau0": 0.03,
        "noise": {"sigma_w": 1e-4, "sigma_v": 1e-3, "sigma_x0": 3e-3},
        "input": {"kind": "momi", "channel": "P_ref", "num": [1.0], "den": [1.0, 5.0], "amplitude": 1.0},
        "random_x0": True,
        "operating_point": True,
    },
    "split": {"train_fraction": 0.8, "seed": 0},
    "model": {"L": 6, "h": 8, "d": 64, "d_ff": 256, "dropout": 0.1},
    "train": {"lr": 1e-4, "batch_size": 16, "epochs": 100, "seed": 0, "clip_norm": None},
    "detect": {"cycles": 200, "seed": 7},
    "gradcheck": {"tolerance": 1e-4},
}


class CliError(Exception):
    """A user-facing failure with a stable error kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in out:
            raise CliError("config", f"unknown config key {where}{key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def default_threads() -> int:
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError("config", f"{ENV_THREADS} must be an integer, got {env!r}") from None
        if n < 1:
            raise CliError("config", f"{ENV_THREADS} must be >= 1")
        return n
    return os.cpu_count() or 1


@dataclass
class RunConfig:
    values: dict
    threads: int

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    def hash(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- builders for library objects
    def network(self):
        from .grid.network import bundled, load_network

        ref = self.values["network"]
        if ref == "ieee33":
            return load_network(bundled("ieee33.net"))
        path = Path(ref)
        if not path.exists():
            raise CliError("input", f"network file {ref} does not exist")
        return load_network(path)

    def params(self):
        from .grid.assemble import default_params
        from .grid.params import load_params

        ref = self.values["params"]
        if ref is None:
            return default_params()
        if not Path(ref).exists():
            raise CliError("input", f"parameter file {ref} does not exist")
        return load_params(ref)

    def gen_config(self):
        from .data.scenarios import GenConfig, InputSpec
        from .shs.dynamics import DetectionSchedule, NoiseSpec

        g = self.values["gen"]
        inp = dict(g["input"])
        inp["num"], inp["den"] = tuple(inp["num"]), tuple(inp["den"])
        return GenConfig(
            counts=tuple(int(c) for c in g["counts"]),
            schedule=DetectionSchedule(tau=g["tau"], tau0=g["tau0"], dt=g["dt"]),
            base_seed=int(g["base_seed"]),
            noise=NoiseSpec(**g["noise"]),
            input=InputSpec(**inp),
            random_x0=bool(g["random_x0"]),
            operating_point=bool(g["operating_point"]),
        )

    def model_config(self, dataset=None):
        from .tsformer.model import ModelConfig

        m = dict(self.values["model"])
        if dataset is not None:
            m.update(S=dataset.S, M=dataset.M, N_c=dataset.n_classes)
        return ModelConfig(**m)

    def train_config(self):
        from .tsformer.train import TrainConfig

        return TrainConfig(**self.values["train"])

    def scenarios(self):
        from .data.scenarios import ScenarioLibrary

        return ScenarioLibrary(self.network(), self.params())

    def need(self, key: str) -> Path:
        ref = self.values.get(key)
        if ref is None:
            raise CliError("config", f"--{key} is required for this command")
        path = Path(ref)
        if not path.exists():
            raise CliError("input", f"{key} file {ref} does not exist")
        return path


# ---------------------------------------------------------------- outputs

def _versions() -> dict:
    import matplotlib
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "shsgrid": _package_version()}


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def _seeds(values: dict) -> dict:
    return {"gen.base_seed": values["gen"]["base_seed"], "split.seed": values["split"]["seed"],
            "train.seed": values["train"]["seed"], "detect.seed": values["detect"]["seed"]}


def write_manifest(rc: RunConfig, command: str, artifacts: list[str]) -> Path:
    doc = {"command": command, "config_hash": rc.hash(), "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
           "seeds": _seeds(rc.values), "threads": rc.threads, "versions": _versions(), "config": rc.values,
           "artifacts": artifacts}
    path = rc.out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, default=str))
    return path


def write_metrics(rc: RunConfig, command: str, **fields) -> Path:
    doc = {"command": command, "config_hash": rc.hash()}
    doc.update({k: v for k, v in fields.items() if v is not None})
    path = rc.out / "metrics.json"
    path.write_text(json.dumps(doc, indent=2, default=float))
    return path


# ---------------------------------------------------------------- commands

def cmd_build_model(rc: RunConfig, args) -> int:
    from .shs.modes import save_library

    scen = rc.scenarios()
    lib_dir = save_library(scen.library, rc.out / "modes")
    base = scen.base.model
    counts = {c.label: len(scen.ids_of(c)) for c in type(scen.base.label)}
    write_metrics(rc, "build-model", n_modes=len(scen.library), mode_counts=counts, n=base.n, m=base.m, p=base.p,
                  spectral_abscissa=base.spectral_abscissa())
    write_manifest(rc, "build-model", [str(lib_dir)])
    print(f"{len(scen.library)} modes (n={base.n}, m={base.m}, p={base.p}) written to {lib_dir}")
    return 0


def cmd_gen_data(rc: RunConfig, args) -> int:
    from .data.dataset import split_dataset, write_dataset
    from .data.scenarios import generate_dataset

    scen = rc.scenarios()
    ds = generate_dataset(scen, rc.gen_config(), threads=rc.threads)
    sp = rc.values["split"]
    ds = split_dataset(ds, sp["train_fraction"], sp["seed"])
    path = write_dataset(ds, rc.out / "dataset.shsd")
    write_metrics(rc, "gen-data", windows=ds.N, S=ds.S, M=ds.M, class_counts=ds.class_counts().tolist(),
                  n_train=int(ds.train_idx.size), n_test=int(ds.test_idx.size), fingerprint=ds.fingerprint.hex())
    write_manifest(rc, "gen-data", [str(path)])
    print(f"{ds.N} windows of {ds.S}x{ds.M} written to {path}")
    return 0


def _confusion_outputs(rc: RunConfig, cm, stem: str, title: str) -> list[str]:
    from .report import confusion_figure

    csv_path = rc.out / f"{stem}.csv"
    np.savetxt(csv_path, cm.counts, fmt="%d", delimiter=",")
    png = confusion_figure(cm.counts, rc.out / f"{stem}.png", title)
    return [str(csv_path), str(png)]


def cmd_train(rc: RunConfig, args) -> int:
    from .data.dataset import read_dataset
    from .report import history_figure
    from .tsformer.checkpoint import Checkpoint, save_checkpoint
    from .tsformer.train import evaluate, train

    ds = read_dataset(rc.need("dataset"))
    mc = rc.model_config(ds)
    hist_path = rc.out / "history.jsonl"
    log = (lambda r: print(json.dumps(r))) if args.verbose else None
    t0 = time.perf_counter()
    params, history = train(ds, mc, rc.train_config(), history_path=hist_path, log=log)
    seconds = time.perf_counter() - t0
    ckpt = Checkpoint(params, ds.mean, ds.std, ds.fingerprint)
    path = save_checkpoint(ckpt, rc.out / "model.shsm")
    cm_train, cm_test = evaluate(params, ds, "train"), evaluate(params, ds, "test")
    arts = [str(path), str(hist_path), str(history_figure(history, rc.out / "history.png"))]
    arts += _confusion_outputs(rc, cm_test, "confusion_test", "Test split")
    write_metrics(rc, "train", accuracy=cm_test.accuracy, train_accuracy=cm_train.accuracy,
                  confusion=cm_test.counts.tolist(), train_seconds=seconds,
                  final_train_loss=history[-1]["train_loss"])
    write_manifest(rc, "train", arts)
    print(f"train accuracy {cm_train.accuracy:.4f}, test accuracy {cm_test.accuracy:.4f} ({seconds:.0f} s)")
    return 0


def _load_checkpoint(rc: RunConfig):
    from .tsformer.checkpoint import load_checkpoint

    return load_checkpoint(rc.need("checkpoint"))


def cmd_eval(rc: RunConfig, args) -> int:
    from .data.dataset import FingerprintMismatch, read_dataset
    from .tsformer.train import evaluate

    ckpt = _load_checkpoint(rc)
    ds = read_dataset(rc.need("dataset"))
    if ckpt.fingerprint != ds.fingerprint:
        raise FingerprintMismatch("checkpoint was trained on a different dataset")
    cm = evaluate(ckpt.params, ds, args.split)
    arts = _confusion_outputs(rc, cm, f"confusion_{args.split}", f"{args.split} split")
    write_metrics(rc, "eval", accuracy=cm.accuracy, confusion=cm.counts.tolist(), split=args.split)
    write_manifest(rc, "eval", arts)
    print(f"{args.split} accuracy {cm.accuracy:.4f} on {cm.total} windows")
    return 0


def _stream(rc: RunConfig, scen):
    from .detector import make_stream

    d = rc.values["detect"]
    return make_stream(scen, int(d["cycles"]), int(d["seed"]), rc.gen_config().schedule)


def cmd_detect(rc: RunConfig, args) -> int:
    from .detector import detect_stream
    from .report import sequence_figure

    ckpt = _load_checkpoint(rc)
    scen = rc.scenarios()
    seq = detect_stream(ckpt, scen, _stream(rc, scen), rc.gen_config())
    arts = [str(seq.write_csv(rc.out / "sequence.csv")), str(seq.write_plot_json(rc.out / "sequence.json")),
            str(sequence_figure(seq.true_class, seq.pred_class, rc.out / "sequence.png"))]
    cm = seq.confusion()
    arts += _confusion_outputs(rc, cm, "confusion_online", "Online detection")
    write_metrics(rc, "detect", accuracy=seq.accuracy, confusion=cm.counts.tolist(),
                  per_cycle_latency_ms={"mean": float(seq.latency_ms.mean()), "max": float(seq.latency_ms.max())})
    write_manifest(rc, "detect", arts)
    print(f"online accuracy {seq.accuracy:.4f} over {len(seq)} cycles; "
          f"latency mean {seq.latency_ms.mean():.2f} ms, max {seq.latency_ms.max():.2f} ms")
    return 0


def cmd_observability(rc: RunConfig, args) -> int:
    from .shs.analysis import observability

    scen = rc.scenarios()
    rows = []
    for mode in scen.library:
        _, rank = observability(mode)
        rows.append((mode.id, mode.label.label, rank, mode.model.n))
    path = rc.out / "observability.csv"
    with path.open("w") as fh:
        fh.write("mode,class,rank,n\n")
        fh.writelines(f"{a},{b},{c},{d}\n" for a, b, c, d in rows)
    ranks = [r[2] for r in rows]
    write_metrics(rc, "observability", min_rank=min(ranks), max_rank=max(ranks), n=rows[0][3])
    write_manifest(rc, "observability", [str(path)])
    print(f"observability rank ranges {min(ranks)}..{max(ranks)} of n={rows[0][3]} over {len(rows)} modes")
    return 0


def cmd_momi_check(rc: RunConfig, args) -> int:
    from .shs.analysis import momi_check

    scen = rc.scenarios()
    u = rc.gen_config().input.rational()
    if u is None:
        raise CliError("config", "momi-check needs gen.input.kind = 'momi'")
    verdict = momi_check(u, scen.library)
    write_metrics(rc, "momi-check", accepted=verdict.accepted, free_roots=[str(r) for r in verdict.free_roots],
                  clash_mode=verdict.mode_id, shared_root=None if verdict.shared_root is None else str(verdict.shared_root))
    write_manifest(rc, "momi-check", [])
    print("MoMI accepted" if verdict.accepted else f"MoMI rejected: root {verdict.shared_root} shared with mode {verdict.mode_id}")
    return 0


def cmd_gradcheck(rc: RunConfig, args) -> int:
    from .tsformer.gradcheck import grad_check

    report = grad_check(tolerance=float(rc.values["gradcheck"]["tolerance"]))
    write_metrics(rc, "gradcheck", grad_max_rel_err=report.max_rel_err, passed=report.passed,
                  per_group=report.per_group)
    write_manifest(rc, "gradcheck", [])
    for group, err in report.per_group.items():
        print(f"{group:12s} {err:.3e}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_baseline(rc: RunConfig, args) -> int:
    from .detector import compare_baseline, response_library

    ckpt = _load_checkpoint(rc)
    scen = rc.scenarios()
    config = rc.gen_config()
    lib = response_library(scen, config)
    report = compare_baseline(ckpt, scen, lib, _stream(rc, scen), config)
    doc = report.to_dict()
    path = rc.out / "baseline.json"
    path.write_text(json.dumps(doc, indent=2))
    write_metrics(rc, "baseline", accuracy=doc["transformer"]["accuracy"], baseline_accuracy=doc["baseline"]["accuracy"],
                  agreement=report.agreement, min_library_gap=lib.min_gap())
    write_manifest(rc, "baseline", [str(path)])
    print(f"transformer {doc['transformer']['accuracy']:.4f}, residual matching {doc['baseline']['accuracy']:.4f}, "
          f"agreement {report.agreement:.4f}")
    return 0


COMMANDS = {
    "build-model": (cmd_build_model, "assemble the base model and every contingency mode"),
    "gen-data": (cmd_gen_data, "generate and split the labeled window dataset"),
    "train": (cmd_train, "train the transformer classifier"),
    "eval": (cmd_eval, "evaluate a checkpoint on a dataset split"),
    "detect": (cmd_detect, "run online detection over a fresh scenario stream"),
    "observability": (cmd_observability, "observability rank of every mode"),
    "momi-check": (cmd_momi_check, "check the excitation against every mode's poles"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the transformer gradients"),
    "baseline": (cmd_baseline, "compare the transformer with residual matching"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shsgrid", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (keys as in the built-in defaults)")
    common.add_argument("--out", help="output directory (default: run)")
    common.add_argument("--network", help="network file, or 'ieee33' for the bundled feeder")
    common.add_argument("--params", help="parameter INI file (default: bundled constants)")
    common.add_argument("--threads", type=int, help=f"worker cap (default: ${ENV_THREADS} or CPU count)")
    common.add_argument("--base-seed", type=int, help="dataset base seed")
    common.add_argument("--verbose", action="store_true", help="print per-epoch training records")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name in ("gen-data",):
            p.add_argument("--counts", type=int, nargs=3, metavar=("NORMAL", "PHYSICAL", "MEASUREMENT"),
                           help="windows per class")
            p.add_argument("--train-fraction", type=float, help="stratified training share")
            p.add_argument("--split-seed", type=int, help="split shuffle seed")
        if name in ("train", "eval"):
            p.add_argument("--dataset", help="dataset file from gen-data")
        if name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--seed", type=int, help="training seed")
            p.add_argument("--layers", type=int, help="encoder layers L")
            p.add_argument("--heads", type=int, help="attention heads h")
            p.add_argument("--d-model", type=int, help="embedding width d")
            p.add_argument("--d-ff", type=int, help="feedforward width")
            p.add_argument("--dropout", type=float)
        if name in ("eval", "detect", "baseline"):
            p.add_argument("--checkpoint", help="model checkpoint from train")
        if name == "eval":
            p.add_argument("--split", choices=("train", "test", "all"), default="test")
        if name in ("detect", "baseline"):
            p.add_argument("--cycles", type=int, help="detection cycles in the stream")
            p.add_argument("--stream-seed", type=int, help="seed of the scenario stream")
        if name == "gradcheck":
            p.add_argument("--tolerance", type=float)
    return parser


FLAG_PATHS = {
    "out": ("out",), "network": ("network",), "params": ("params",), "dataset": ("dataset",),
    "checkpoint": ("checkpoint",), "base_seed": ("gen", "base_seed"), "counts": ("gen", "counts"),
    "train_fraction": ("split", "train_fraction"), "split_seed": ("split", "seed"),
    "epochs": ("train", "epochs"), "lr": ("train", "lr"), "batch_size": ("train", "batch_size"),
    "seed": ("train", "seed"), "layers": ("model", "L"), "heads": ("model", "h"), "d_model": ("model", "d"),
    "d_ff": ("model", "d_ff"), "dropout": ("model", "dropout"), "cycles": ("detect", "cycles"),
    "stream_seed": ("detect", "seed"), "tolerance": ("gradcheck", "tolerance"),
}


def resolve(args) -> RunConfig:
    values = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError("input", f"config file {args.config} does not exist")
        try:
            values = _merge(values, json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError("config", f"config file is not valid JSON: {exc}") from None
    for flag, keys in FLAG_PATHS.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        node = values
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = list(val) if isinstance(val, list) else val
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise CliError("config", "--threads must be >= 1")
    return RunConfig(values, threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out or DEFAULTS["out"])
    try:
        rc = resolve(args)
        out = rc.out
        out.mkdir(parents=True, exist_ok=True)
        handler = COMMANDS[args.command][0]
        return handler(rc, args)
    except Exception as exc:  # reported as machine-readable JSON
        kind = exc.kind if isinstance(exc, CliError) else type(exc).__name__
        doc = {"command": args.command, "error": kind, "message": str(exc)}
        text = json.dumps(doc)
        print(text, file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
