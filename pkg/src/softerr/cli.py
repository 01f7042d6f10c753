"""``softerr`` command line: run campaigns from a flat config file and/or
flags, write one CSV per command plus a replayable provenance file.

Config files hold ``key = value`` lines; ``#`` starts a comment. Flags
override file values. Lists are comma separated; a BER list may also be
written ``lo:hi:n`` for ``n`` log-spaced points. Exit status is 0 on
success, 2 for configuration errors and 3 for runtime failures; failures
also print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# value parsing


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _float(text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _split(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _float_list(text):
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"BER range must be lo:hi:n, got {text!r}")
        lo, hi, n = _float(parts[0]), _float(parts[1]), _int(parts[2])
        if not (0 < lo <= hi) or n < 1:
            raise ConfigError(f"bad BER range {text!r}")
        return [float(v) for v in np.geomspace(lo, hi, n)]
    return [_float(t) for t in _split(text)]


def _int_list(text):
    return [_int(t) for t in _split(text)]


def _layers(text):
    text = str(text).strip()
    if text == "all":
        return "all"
    return tuple(_int_list(text))


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return conv


# key -> (converter, default). ``None`` defaults are filled per command.
KEYS = {
    "command": (str, None),
    "model": (str, None),
    "images_path": (str, None),
    "labels_path": (str, None),
    "test_images_path": (str, None),
    "test_labels_path": (str, None),
    "images": (_int, None),
    "target": (_choice("weights", "activations"), "activations"),
    "fault_mode": (_choice("random_bit", "msb_only"), "random_bit"),
    "layers": (_layers, "all"),
    "ber": (_float, 1e-3),
    "bers": (_float_list, [1e-4, 1e-3, 1e-2]),
    "trials": (_int, 1000),
    "sampling": (_choice("single_image", "multi_image"), "multi_image"),
    "seed": (_int, 0),
    "threads": (_int, None),
    "out": (str, "softerr-out"),
    "mode": (str, None),
    "anchor_count": (_int, 4),
    "anchor_trials": (_int, None),
    "inject_layer": (_int, None),
    "n_combos": (_int, 32),
    "common_random_numbers": (_bool, True),
    "factors": (_float_list, [1.0, 2.0, 4.0, 8.0]),
    "subset_sizes": (_int_list, [2, 5, 10]),
    "k": (_int, 3),
    "model_math": (_choice("binary", "multiclass", "empirical"), "multiclass"),
    "rrmse": (_float_list, [0.1, 0.5, 1.0]),
    "nc": (_int, 10),
    "m": (_float, None),
    "s": (_float, None),
    "acc_clean": (_float, None),
    "arch": (str, "lenet5"),
    "epochs": (_int, 10),
    "lr": (_float, 0.1),
    "batch_size": (_int, 32),
    "bits": (_int, 8),
}

COMMON = ("model", "images_path", "labels_path", "images", "seed", "threads", "out")
FAULT = ("target", "fault_mode", "layers", "trials", "sampling")

COMMANDS = {
    "train-fixture": ("images_path", "labels_path", "test_images_path", "test_labels_path", "model", "images",
                      "arch", "epochs", "lr", "batch_size", "bits", "seed", "out", "threads"),
    "simulate": COMMON + FAULT + ("ber",),
    "sweep": COMMON + FAULT + ("bers", "mode", "anchor_count", "anchor_trials"),
    "propagate": COMMON + ("fault_mode", "trials", "ber", "inject_layer"),
    "aggregate-validate": COMMON + ("target", "fault_mode", "layers", "trials", "bers", "n_combos",
                                    "common_random_numbers"),
    "bound-sweep": COMMON + ("fault_mode", "trials", "ber", "factors"),
    "bitwidth-compare": COMMON + ("target", "trials", "ber"),
    "class-subset": COMMON + ("target", "fault_mode", "trials", "bers", "subset_sizes"),
    "fragile": COMMON + ("target", "trials", "ber", "mode", "k"),
    "predict": ("model_math", "rrmse", "nc", "m", "s", "acc_clean", "out"),
    "diagnose": COMMON + ("trials", "ber", "inject_layer"),
}

MODE_CHOICES = {"sweep": ("standard", "accelerated"), "fragile": ("bruteforce", "accelerated")}

SCHEMAS = {
    "simulate": ["ber", "mode", "trials", "images", "flips_total", "rrmse_mean", "rrmse_stderr",
                 "accuracy", "accuracy_stderr", "seed"],
    "sweep": ["ber", "mode", "trials", "images", "flips_total", "rrmse_mean", "rrmse_stderr",
              "accuracy", "accuracy_stderr", "seed"],
    "train-fixture": ["arch", "epochs", "seed", "lr", "bits", "train_images", "test_accuracy_float",
                      "test_accuracy_quantized", "model_checksum"],
    "propagate": ["inject_layer", "layer", "kind", "rrmse"],
    "aggregate-validate": ["combo", "layers", "rates", "measured_rrmse", "predicted_rrmse",
                           "relative_error"],
    "bound-sweep": ["factor", "rrmse", "rrmse_stderr", "clean_accuracy"],
    "bitwidth-compare": ["bits", "trials", "flips_total", "rrmse", "rrmse_stderr", "accuracy",
                         "accuracy_stderr"],
    "class-subset": ["nc", "ber", "accuracy"],
    "fragile": ["rank", "protected", "score", "method"],
    "predict": ["rrmse", "accuracy"],
    "diagnose": ["source", "layer", "n", "mean", "var", "skewness", "excess_kurtosis", "ks_distance"],
}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; unknown keys are an error."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve(command: str, file_values: dict, flag_values: dict) -> dict:
    """Defaults < config file < flags, restricted to the command's keys."""
    allowed = COMMANDS[command]
    if "command" in file_values and file_values["command"] != command:
        raise ConfigError(f"config is for {file_values['command']!r}, not {command!r}")
    merged = {k: v for k, v in file_values.items() if k != "command"}
    merged.update(flag_values)
    extra = sorted(k for k in merged if k not in allowed)
    if extra:
        raise ConfigError(f"keys not used by {command}: {', '.join(extra)}")
    cfg = {}
    for key in allowed:
        conv, default = KEYS[key]
        if key in merged:
            value = merged[key]
            cfg[key] = conv(value) if isinstance(value, str) else value
        else:
            cfg[key] = default
    if command in MODE_CHOICES:
        cfg["mode"] = _choice(*MODE_CHOICES[command])(cfg["mode"] or MODE_CHOICES[command][0])
    if "threads" in cfg and cfg["threads"] is None:
        cfg["threads"] = _env_threads()
    for key in ("trials", "images", "threads", "anchor_count", "anchor_trials", "n_combos", "epochs",
                "batch_size"):
        if cfg.get(key) is not None and cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if cfg.get("bits") is not None and cfg["bits"] not in (8, 16):
        raise ConfigError("bits must be 8 or 16")
    for key in ("ber",):
        if key in cfg and not 0 <= cfg[key] <= 1:
            raise ConfigError(f"{key} must lie in [0, 1]")
    for key in ("bers",):
        if key in cfg and any(not 0 <= b <= 1 for b in cfg[key]):
            raise ConfigError(f"{key} must lie in [0, 1]")
    return cfg


def _env_threads() -> int:
    text = os.environ.get("SOFTERR_THREADS", "1")
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"SOFTERR_THREADS must be an integer, got {text!r}") from None
    if n < 1:
        raise ConfigError("SOFTERR_THREADS must be >= 1")
    return n


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def emit_csv(path, header, rows) -> None:
    """UTF-8 CSV with a header row and 9 significant digits for floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])


def _config_text(value) -> str:
    # repr keeps floats exact so a replay sees the same numbers
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_config_text(v) for v in value)
    return str(value)


def write_provenance(path, command: str, cfg: dict, info: dict) -> None:
    """Resolved config (replayable with ``--config``) plus run facts as comments."""
    lines = [f"# softerr {__version__} provenance", f"command = {command}"]
    for key in COMMANDS[command]:
        if key == "threads":
            continue  # never changes results
        value = cfg.get(key)
        if value is not None:
            lines.append(f"{key} = {_config_text(value)}")
    for key, value in info.items():
        if key == "command":
            continue
        lines.append(f"# {key}: {json.dumps(value, default=_json_default, sort_keys=True)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    return str(obj)


# --------------------------------------------------------------------------
# command implementations. Each returns (rows, info, summary text).


def _load_inputs(cfg, need_dataset=True):
    from .fixtures import dataset_paths, model_path
    from .model_io import load_idx_dataset, load_network

    net = load_network(cfg.get("model") or model_path("lenet5"))
    if not need_dataset:
        return net, None
    default_images, default_labels = dataset_paths("test")
    ds = load_idx_dataset(cfg.get("images_path") or default_images, cfg.get("labels_path") or default_labels,
                          class_count=net.class_count)
    if cfg.get("images"):
        ds = ds.subset(slice(0, min(cfg["images"], len(ds))))
    return net, ds


def _fault(cfg, rate=None):
    from .faults import FaultSpec

    return FaultSpec(cfg.get("target", "activations"), cfg.get("fault_mode", "random_bit"),
                     cfg.get("ber", 0.0) if rate is None else rate, cfg.get("layers", "all"), cfg["seed"])


def _sweep_rows(result):
    return [[getattr(r, c) for c in SCHEMAS["sweep"]] for r in result.rows]


def cmd_simulate(cfg):
    from .campaigns import CampaignSpec, ber_sweep_standard

    spec = CampaignSpec(_fault(cfg), (cfg["ber"],), cfg["trials"], cfg["sampling"], cfg["seed"])
    net, ds = _load_inputs(cfg)
    res = ber_sweep_standard(net, ds, spec, workers=cfg["threads"])
    row = res.rows[0]
    text = (f"ber={row.ber:.9g} rrmse={row.rrmse_mean:.9g} (se {row.rrmse_stderr:.3g}) "
            f"accuracy={row.accuracy:.9g} (se {row.accuracy_stderr:.3g}) flips={row.flips_total}")
    return _sweep_rows(res), res.provenance, text


def cmd_sweep(cfg):
    from .campaigns import CampaignSpec, ber_sweep_accelerated, ber_sweep_standard

    spec = CampaignSpec(_fault(cfg, 0.0), tuple(cfg["bers"]), cfg["trials"], cfg["sampling"], cfg["seed"])
    net, ds = _load_inputs(cfg)
    if cfg["mode"] == "standard":
        res = ber_sweep_standard(net, ds, spec, workers=cfg["threads"])
    else:
        res = ber_sweep_accelerated(net, ds, spec, cfg["anchor_count"], anchor_trials=cfg["anchor_trials"],
                                    workers=cfg["threads"])
    text = f"{len(res.rows)} BER points, {res.faulty_inferences} faulty inferences"
    return _sweep_rows(res), res.provenance, text


def cmd_propagate(cfg):
    from .campaigns import layer_propagation_experiment

    net, ds = _load_inputs(cfg)
    layer = cfg["inject_layer"] if cfg["inject_layer"] is not None else net.quant_sites[0]
    if layer not in net.quant_sites:
        raise ConfigError(f"inject_layer must be one of the quantized sites {net.quant_sites}")
    r = layer_propagation_experiment(net, ds, cfg["ber"], layer, cfg["trials"], cfg["fault_mode"], cfg["seed"],
                                     workers=cfg["threads"])
    rows = [[layer, i, net.layers[i].kind, float(v)] for i, v in enumerate(r)]
    down = r[layer:]
    down = down[down > 0]
    ratio = float(down.max() / down.min()) if len(down) else float("nan")
    return rows, {"downstream_max_min_ratio": ratio}, f"downstream max/min RRMSE ratio {ratio:.4g}"


def cmd_aggregate(cfg):
    from .campaigns import aggregation_validation

    net, ds = _load_inputs(cfg)
    layers = None if cfg["layers"] == "all" else cfg["layers"]
    rows_ = aggregation_validation(net, ds, tuple(cfg["bers"]), cfg["n_combos"], cfg["trials"], cfg["target"],
                                   cfg["fault_mode"], cfg["seed"], layers,
                                   common_random_numbers=cfg["common_random_numbers"], workers=cfg["threads"])
    rows = []
    for i, r in enumerate(rows_):
        rows.append([i, ";".join(str(l) for l in r.rates), ";".join(format_value(p) for p in r.rates.values()),
                     r.measured, r.predicted, r.relative_error])
    mean_err = float(np.mean([r.relative_error for r in rows_])) if rows_ else float("nan")
    return rows, {"mean_relative_error": mean_err}, f"{len(rows_)} combos, mean relative error {mean_err:.4g}"


def cmd_bound_sweep(cfg):
    from .campaigns import bound_sweep, linear_fit_r2

    net, ds = _load_inputs(cfg)
    out = bound_sweep(net, ds, cfg["ber"], tuple(cfg["factors"]), cfg["trials"], cfg["seed"], cfg["fault_mode"],
                      workers=cfg["threads"])
    r2 = linear_fit_r2([o[0] for o in out], [o[1] for o in out]) if len(out) > 1 else float("nan")
    return [list(o) for o in out], {"linear_r2": r2}, f"linear fit R^2 {r2:.4g}"


def cmd_bitwidth(cfg):
    from .campaigns import bitwidth_comparison

    net, ds = _load_inputs(cfg)
    r8, r16, res = bitwidth_comparison(net, ds, cfg["ber"], cfg["trials"], cfg["seed"], cfg["target"],
                                       workers=cfg["threads"])
    rows = [[bits, r.n, r.flips_total, r.rrmse, r.rrmse_stderr, r.accuracy, r.accuracy_stderr]
            for bits, r in zip((8, 16), res)]
    rel = abs(r8 - r16) / r8 if r8 > 0 else float("nan")
    return rows, {"relative_difference": rel}, f"int8 {r8:.4g} vs int16 {r16:.4g} (relative diff {rel:.3g})"


def cmd_class_subset(cfg):
    from .campaigns import class_subset_experiment

    net, ds = _load_inputs(cfg)
    out = class_subset_experiment(net, ds, tuple(cfg["subset_sizes"]), tuple(cfg["bers"]), cfg["trials"],
                                  cfg["seed"], cfg["target"], cfg["fault_mode"], workers=cfg["threads"])
    rows = [[nc, b, a] for nc, accs in out.items() for b, a in zip(cfg["bers"], accs)]
    return rows, {}, f"{len(out)} class counts x {len(cfg['bers'])} BERs"


def cmd_fragile(cfg):
    from .campaigns import fragile_layers_accelerated, fragile_layers_bruteforce

    net, ds = _load_inputs(cfg)
    fn = fragile_layers_bruteforce if cfg["mode"] == "bruteforce" else fragile_layers_accelerated
    rep = fn(net, ds, cfg["ber"], cfg["k"], trials=cfg["trials"], seed=cfg["seed"], target=cfg["target"],
             workers=cfg["threads"])
    rows = [[i + 1, ";".join(str(l) for l in subset), score, rep.method]
            for i, (subset, score) in enumerate(rep.ranking)]
    info = dict(rep.provenance)
    info["layer_scores"] = {str(k): v for k, v in rep.layer_scores.items()}
    return rows, info, f"top-{rep.k} protected layers {list(rep.chosen)} ({rep.faulty_inferences} faulty inferences)"


def cmd_predict(cfg):
    from .stat_models import AccuracyModelEmpirical, binary_accuracy, multiclass_accuracy

    if any(r < 0 for r in cfg["rrmse"]):
        raise ConfigError("rrmse values must be non-negative")
    if cfg["model_math"] == "binary":
        fn = binary_accuracy
    elif cfg["model_math"] == "multiclass":
        if cfg["nc"] < 2:
            raise ConfigError("nc must be >= 2")
        fn = lambda r: multiclass_accuracy(r, cfg["nc"])  # noqa: E731
    else:
        missing = [k for k in ("m", "s", "acc_clean") if cfg[k] is None]
        if missing:
            raise ConfigError(f"empirical model needs {', '.join(missing)}")
        try:
            fn = AccuracyModelEmpirical(cfg["m"], cfg["s"], cfg["acc_clean"], cfg["nc"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    rows = [[r, float(fn(r))] for r in cfg["rrmse"]]
    text = "\n".join(f"rrmse={r:.9g} accuracy={a:.9g}" for r, a in rows)
    return rows, {}, text


def cmd_diagnose(cfg):
    from .faults import FaultInjector, FaultSpec
    from .model_io import cache_golden_outputs
    from .network import run_batch
    from .stat_models import DegenerateSamplesError, normality_diagnostics

    net, ds = _load_inputs(cfg)
    rows = []

    def add(source, layer, samples):
        try:
            rep = normality_diagnostics(samples)
            rows.append([source, layer, rep.n, rep.mean, rep.var, rep.skewness, rep.excess_kurtosis, rep.ks_distance])
        except DegenerateSamplesError:
            nan = float("nan")
            rows.append([source, layer, int(np.size(samples)), nan, nan, nan, nan, nan])

    for l in net.parametric_layers:
        add("weights", l, net.params[l][0])
    x = ds.images[: min(len(ds), 200)]
    outs = run_batch(net, x, 0, quantized=False, keep="all")
    for l in net.quant_sites:
        add("activations", l, outs[l])

    # neuron errors downstream of one injected layer, on one fixed image
    layer = cfg["inject_layer"] if cfg["inject_layer"] is not None else net.quant_sites[0]
    if layer not in net.quant_sites:
        raise ConfigError(f"inject_layer must be one of the quantized sites {net.quant_sites}")
    golden = cache_golden_outputs(net, ds)
    ok = np.flatnonzero(golden.logits.argmax(axis=1) == ds.labels)
    img = ds.images[[int(ok[0]) if len(ok) else 0]]
    gold = run_batch(net, img, 0, quantized=True, keep="all")
    inj = FaultInjector(net, [FaultSpec("activations", "random_bit", cfg["ber"], (layer,), cfg["seed"])])
    trials = np.arange(cfg["trials"])
    outs, _ = inj.run(np.repeat(img, len(trials), axis=0), trials, keep="all")
    for l in range(layer, len(net.layers)):
        if l in net.quant_sites:
            d = outs[l].reshape(len(trials), -1)[:, 0] - gold[l].reshape(-1)[0]
            add("errors", l, d)
    return rows, {"inject_layer": layer}, f"{len(rows)} distributions summarized"


def cmd_train(cfg):
    from .fixtures import ARCHITECTURES, dataset_paths
    from .model_io import clean_accuracy, load_idx_dataset, network_checksum, save_network
    from .training import train_fixture

    if cfg["arch"] not in ARCHITECTURES:
        raise ConfigError(f"arch must be one of {', '.join(ARCHITECTURES)}")
    tr_i, tr_l = dataset_paths("train")
    te_i, te_l = dataset_paths("test")
    train = load_idx_dataset(cfg["images_path"] or tr_i, cfg["labels_path"] or tr_l)
    test = load_idx_dataset(cfg["test_images_path"] or te_i, cfg["test_labels_path"] or te_l)
    if cfg["images"]:
        train = train.subset(slice(0, min(cfg["images"], len(train))))
    net = train_fixture(train, ARCHITECTURES[cfg["arch"]](), epochs=cfg["epochs"], seed=cfg["seed"], lr=cfg["lr"],
                        batch_size=cfg["batch_size"], bits=cfg["bits"])
    path = Path(cfg["model"] or Path(cfg["out"]) / f"{cfg['arch']}.sfm")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_network(net, path)
    acc_f, acc_q = clean_accuracy(net, test, quantized=False), clean_accuracy(net, test)
    row = [cfg["arch"], cfg["epochs"], cfg["seed"], cfg["lr"], cfg["bits"], len(train), acc_f, acc_q,
           network_checksum(net)]
    return [row], {"model_path": str(path)}, f"saved {path}: test accuracy {acc_q:.4f} (float {acc_f:.4f})"


HANDLERS = {
    "train-fixture": cmd_train,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "propagate": cmd_propagate,
    "aggregate-validate": cmd_aggregate,
    "bound-sweep": cmd_bound_sweep,
    "bitwidth-compare": cmd_bitwidth,
    "class-subset": cmd_class_subset,
    "fragile": cmd_fragile,
    "predict": cmd_predict,
    "diagnose": cmd_diagnose,
}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # no prefix matching: --images must never mean --images-path
    def __init__(self, *args, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*args, **kw)

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="softerr", description="Soft-error fault simulation for quantized networks.")
    p.add_argument("--version", action="version", version=f"softerr {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value file")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            kw = {"default": argparse.SUPPRESS, "dest": key}
            if key == "mode" and name in MODE_CHOICES:
                kw["choices"] = MODE_CHOICES[name]
            sp.add_argument(flag, **kw)
    return p


def _fail(code: int, exc: BaseException) -> int:
    kind = "config" if code == EXIT_CONFIG else "runtime"
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .campaigns import CampaignError
    from .faults import FaultSpecError

    try:
        ns = vars(build_parser().parse_args(argv))
        command = ns.pop("command")
        file_values = read_config(ns.pop("config")) if "config" in ns else {}
        cfg = resolve(command, file_values, ns)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    try:
        rows, info, text = HANDLERS[command](cfg)
    except (ConfigError, FaultSpecError, CampaignError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        return _fail(EXIT_RUNTIME, exc)

    try:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        emit_csv(out / f"{command}.csv", SCHEMAS[command], rows)
        write_provenance(out / f"{command}.provenance", command, cfg, info)
    except OSError as exc:
        return _fail(EXIT_RUNTIME, exc)
    print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
