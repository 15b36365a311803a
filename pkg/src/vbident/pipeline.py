"""Stage functions behind the command line: each reads and writes files in one run directory.

Layout of a run directory::

    config.json            resolved configuration
    signals/signal_K.csv   regulation signals as given (normalized ones are scaled per ensemble)
    dataset.vbds           2N+3 training matrix; dataset.json holds provenance
    sae.vbnn               trained autoencoder (+ sae_history.json, vb_state.csv)
    transfer/              grown ensemble: dataset, transferred model, epoch report
    forecaster.vbnn        two-step trained forecaster (+ forecast.csv)
    phi.json               identified virtual battery parameters
    report/                histogram and loss-curve CSVs
    <stage>.manifest.json  inputs, seeds and sha256 of every file a stage touched
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import ensemble as ens_mod
from . import forecaster as fc
from . import sae as sae_mod
from . import tcl, vb
from .errors import ConfigError, DataError
from .formats import load_network, read_vbds, save_network, write_csv_matrix, write_vbds
from .net2net import device_count, transfer
from .signals import RegulationSignal, load_signal, save_signal, scale_signal, synth_signal

log = logging.getLogger(__name__)

GROW_SEED_OFFSET = 1000


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    return json.loads(path.read_text())


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}; run the stage that produces it first")
    return path


def write_manifest(out: Path, stage: str, cfg: dict, inputs, outputs, **extra) -> Path:
    manifest = {
        "stage": stage,
        "seed": cfg["seed"],
        "config_sha256": hashlib.sha256(config_mod.dumps(cfg).encode()).hexdigest(),
        "inputs": {str(Path(p).relative_to(out)): sha256(p) for p in inputs},
        "outputs": {str(Path(p).relative_to(out)): sha256(p) for p in outputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }
    path = out / f"{stage}.manifest.json"
    write_json(path, manifest)
    return path


def load_run_config(out: Path, cfg: dict | None) -> dict:
    """Config passed on the command line wins; otherwise the one stored by ``simulate``."""
    if cfg is not None:
        return cfg
    stored = out / "config.json"
    if stored.is_file():
        return config_mod.validate(json.loads(stored.read_text()))
    raise ConfigError(f"no --config given and {stored} does not exist")


# ---------------------------------------------------------------- ensembles

def base_ensemble(cfg: dict) -> ens_mod.Ensemble:
    e = cfg["ensemble"]
    cls = tcl.AcParams if e["kind"] == "ac" else tcl.WhParams
    try:
        params = cls(**e["params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ensemble.params: {exc}") from None
    return ens_mod.make_ensemble(e["kind"], e["count"], params, seed=cfg["seed"], ambient=e["ambient"],
                                 flow_rate=e["flow_rate"], spread=e["spread"])


def ensemble_for(cfg: dict, n_devices: int) -> ens_mod.Ensemble:
    """The configured ensemble, grown to ``n_devices`` if needed."""
    base = base_ensemble(cfg)
    if n_devices == len(base):
        return base
    return ens_mod.grow_ensemble(base, n_devices, seed=cfg["seed"] + GROW_SEED_OFFSET)


def normalized_signals(cfg: dict, override=None) -> list[RegulationSignal]:
    """Signals from ``override`` (a count or list of CSV paths) or from the config."""
    s = cfg["signals"]
    files, count = s["files"], s["synthetic_count"]
    if override is not None:
        if isinstance(override, int):
            files, count = [], override
        else:
            files, count = list(override), 0
    if files:
        return [load_signal(f, s["dt_s"]) for f in files]
    return [replace(synth_signal(1000 * cfg["seed"] + k, s["duration_s"], s["dt_s"], s["bandwidth_hz"]),
                    source=f"synthetic-{k}") for k in range(count)]


def scaled(signal: RegulationSignal, ensemble, fraction: float) -> RegulationSignal:
    return scale_signal(signal, ensemble.total_rated_power, fraction) if signal.normalized else signal


def simulate_dataset(cfg: dict, ensemble, signals, workers: int):
    """Simulate every signal on ``ensemble``; returns (dataset, trajectories, baseline)."""
    s = cfg["signals"]
    baseline = ens_mod.baseline_power(ensemble, cfg["simulation"]["baseline_horizon_s"], s["dt_s"])
    trajs = ens_mod.simulate_signals(ensemble, signals, baseline, workers)
    dataset = ens_mod.build_dataset(trajs, ensemble)
    if len(dataset.data) == 0:
        raise DataError("every tracking run failed at its first step; the signal is too large for the ensemble")
    return dataset, trajs, baseline


def _dataset_meta(dataset, trajs, baseline, signal_files):
    return {
        "n_devices": dataset.n_devices,
        "kind": dataset.kind,
        "rows": int(len(dataset.data)),
        "columns": int(dataset.data.shape[1]),
        "layout": dataset.layout()["blocks"],
        "provenance": [list(p) for p in dataset.provenance],
        "failure_steps": [t.failure_step for t in trajs],
        "baseline_kw": baseline,
        "signal_files": signal_files,
    }


def _save_dataset(folder: Path, dataset, trajs, baseline, signal_files):
    write_vbds(folder / "dataset.vbds", dataset.data)
    write_json(folder / "dataset.json", _dataset_meta(dataset, trajs, baseline, signal_files))
    return [folder / "dataset.vbds", folder / "dataset.json"]


def _load_dataset(folder: Path):
    data = read_vbds(require(folder / "dataset.vbds"))
    meta = read_json(folder / "dataset.json")
    return data, meta


def run_signals(cfg: dict, out: Path, meta: dict, ensemble) -> list[RegulationSignal]:
    """Signals stored by ``simulate``, scaled to kW for ``ensemble``."""
    dt = cfg["signals"]["dt_s"]
    sigs = [load_signal(require(out / name), dt) for name in meta["signal_files"]]
    return [scaled(s, ensemble, cfg["signals"]["fraction"]) for s in sigs]


def _regulations(cfg: dict, out: Path, meta: dict) -> list[np.ndarray]:
    """Regulation samples (kW) aligned with each dataset segment."""
    sigs = run_signals(cfg, out, meta, ensemble_for(cfg, meta["n_devices"]))
    return [s.samples[:stop - start] for s, (_, start, stop) in zip(sigs, meta["provenance"])]


# ---------------------------------------------------------------- stages

def stage_simulate(cfg: dict, out: Path, *, workers: int = 1, signals=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "signals").mkdir(exist_ok=True)
    (out / "config.json").write_text(config_mod.dumps(cfg))
    ensemble = base_ensemble(cfg)
    raw = normalized_signals(cfg, signals)
    names = []
    for k, sig in enumerate(raw):
        name = f"signals/signal_{k}.csv"
        save_signal(sig, out / name)
        names.append(name)
    sigs = [scaled(s, ensemble, cfg["signals"]["fraction"]) for s in raw]
    dataset, trajs, baseline = simulate_dataset(cfg, ensemble, sigs, workers)
    outputs = _save_dataset(out, dataset, trajs, baseline, names)
    outputs += [out / n for n in names] + [out / "config.json"]
    write_manifest(out, "simulate", cfg, [], outputs, workers=workers)
    log.info("simulated %d signals: %d rows x %d columns", len(sigs), *dataset.data.shape)
    return {"rows": len(dataset.data), "columns": dataset.data.shape[1], "baseline_kw": baseline}


def _write_vb_state(path, codes, regs, provenance, dt):
    rows = []
    for (_, start, stop), u in zip(provenance, regs):
        t = np.arange(stop - start) * dt
        rows.append(np.column_stack([t, codes[start:stop], u]))
    write_csv_matrix(path, np.concatenate(rows), header=["t", "x_t", "u_t"])


def stage_train_sae(cfg: dict, out: Path, *, epochs=None, lr=None) -> dict:
    s = cfg["sae"]
    epochs = s["epochs"] if epochs is None else epochs
    lr = s["lr"] if lr is None else lr
    data, meta = _load_dataset(out)
    target = None if s["target_factor"] is None else s["target_factor"] * sae_mod.pca_floor(data)
    net = sae_mod.build_sae(data.shape[1], s["hidden"], seed=cfg["seed"])
    net, history = sae_mod.train_sae(net, data, epochs=epochs, lr=lr, batch=s["batch"], seed=cfg["seed"],
                                     pretrain_epochs=s["pretrain_epochs"], target_loss=target)
    save_network(net, out / "sae.vbnn")
    write_json(out / "sae_history.json", {"loss": history, "target_loss": target,
                                          "pca_floor": sae_mod.pca_floor(data), "lr": lr, "epochs": epochs})
    regs = _regulations(cfg, out, meta)
    _write_vb_state(out / "vb_state.csv", sae_mod.encode(net, data), regs, meta["provenance"],
                    cfg["signals"]["dt_s"])
    outputs = [out / "sae.vbnn", out / "sae_history.json", out / "vb_state.csv"]
    write_manifest(out, "train-sae", cfg, [out / "dataset.vbds", out / "dataset.json"], outputs)
    return {"epochs_run": len(history), "final_loss": history[-1] if history else None, "target_loss": target}


def stage_transfer(cfg: dict, out: Path, *, source_model=None, new_device_count=None, epochs=None,
                   lr=None, workers: int = 1) -> dict:
    t = cfg["transfer"]
    n_new = t["new_device_count"] if new_device_count is None else new_device_count
    epochs = t["epochs"] if epochs is None else epochs
    lr = t["lr"] if lr is None else lr
    src_path = require(source_model or out / "sae.vbnn")
    source = load_network(src_path)
    n_old = device_count(source.input_shape[0])
    if n_new <= n_old:
        raise ConfigError(f"new device count {n_new} must exceed the source model's {n_old} devices")
    folder = out / "transfer"
    folder.mkdir(exist_ok=True)
    data_src, meta_src = _load_dataset(out)
    ensemble = ensemble_for(cfg, n_new)
    sigs = run_signals(cfg, out, meta_src, ensemble)
    dataset, trajs, baseline = simulate_dataset(cfg, ensemble, sigs, workers)
    outputs = _save_dataset(folder, dataset, trajs, baseline, meta_src["signal_files"])
    floor = max(sae_mod.pca_floor(data_src), sae_mod.pca_floor(dataset.data))
    factor = cfg["sae"]["target_factor"] or 1.05
    target = factor * floor
    net, report = transfer(source, dataset.data.shape[1], seed=cfg["seed"])
    initial = net.loss(dataset.data, dataset.data)
    net, history = sae_mod.train_sae(net, dataset.data, epochs=epochs, lr=lr, batch=cfg["sae"]["batch"],
                                     seed=cfg["seed"], target_loss=target, checks_per_epoch=t["checks_per_epoch"])
    save_network(net, folder / "sae.vbnn")
    cpe = t["checks_per_epoch"]
    report.update(target_loss=target, pca_floor=floor, initial_loss=initial, transfer_loss=history,
                  transfer_epochs=_epochs_to(history, target, cpe), checks_per_epoch=cpe)
    if t["compare_scratch"]:
        hidden = sae_mod.widths_of(source)[1:sae_mod.code_index(source) + 1]
        scratch = sae_mod.build_sae(dataset.data.shape[1], hidden, seed=cfg["seed"] + 7)
        _, sh = sae_mod.train_sae(scratch, dataset.data, epochs=epochs, lr=lr, batch=cfg["sae"]["batch"],
                                  seed=cfg["seed"], pretrain_epochs=cfg["sae"]["pretrain_epochs"] or 0,
                                  target_loss=target, checks_per_epoch=cpe)
        report.update(scratch_loss=sh, scratch_epochs=_epochs_to(sh, target, cpe))
    write_json(folder / "report.json", report)
    outputs += [folder / "sae.vbnn", folder / "report.json"]
    write_manifest(out, "transfer", cfg, [src_path, out / "dataset.vbds"], outputs)
    return {k: report.get(k) for k in ("transfer_epochs", "scratch_epochs", "target_loss",
                                       "pretrained_parameters", "untrained_parameters")}


def _epochs_to(history, target, checks_per_epoch):
    """Epochs (in 1/checks_per_epoch units) until the loss first reached ``target``; None if never."""
    for k, loss in enumerate(history):
        if loss <= target:
            return (k + 1) / checks_per_epoch
    return None


def _model_and_data(out: Path, source_model):
    """Autoencoder plus the dataset whose width matches it (base run or transfer folder)."""
    path = require(source_model or out / "sae.vbnn")
    net = load_network(path)
    for folder in (out, out / "transfer"):
        if (folder / "dataset.json").is_file():
            meta = read_json(folder / "dataset.json")
            if meta["columns"] == net.input_shape[0]:
                data, meta = _load_dataset(folder)
                return path, net, folder, data, meta
    raise DataError(f"no dataset in {out} matches the {net.input_shape[0]} inputs of {path}")


def stage_train_forecaster(cfg: dict, out: Path, *, source_model=None, window=None, epochs=None,
                           lr=None) -> dict:
    f = cfg["forecaster"]
    d = f["window"] if window is None else window
    e1 = f["stage1_epochs"] if epochs is None else epochs
    lr = f["lr"] if lr is None else lr
    path, sae_net, folder, data, meta = _model_and_data(out, source_model)
    codes = sae_mod.encode(sae_net, data)
    regs = _regulations(cfg, out, meta)
    segments = [(codes[a:b], u) for (_, a, b), u in zip(meta["provenance"], regs) if b - a > d + 1]
    if not segments:
        raise DataError(f"no tracking segment is longer than the window d={d}")
    train_segs = segments[:-1] if len(segments) > 1 else segments
    held_x, held_u = segments[-1]
    model = fc.build_forecaster(d, f["filters"], f["extent"], f["units"], seed=cfg["seed"])
    fc.fit_normalization(model, np.concatenate([s[0] for s in train_segs]),
                         np.concatenate([s[1] for s in train_segs]))
    sets = [fc.make_supervised(x, u, d) for x, u in train_segs]
    X = np.concatenate([s.X for s in sets])
    Y = np.concatenate([s.Y for s in sets])
    model, h1 = fc.train_stage1(model, X, Y, epochs=e1, lr=lr, batch=f["batch"], seed=cfg["seed"])
    rmse1 = fc.closed_loop_rmse(model, held_x, held_u)
    gamma = np.concatenate([fc.closed_loop_rollout(model, s.X, s.Y, d)[0] for s in sets])
    model, h2 = fc.train_stage2(model, gamma, Y, epochs=f["stage2_epochs"], lr=f["stage2_lr"], batch=f["batch"],
                                seed=cfg["seed"], X=X)
    rmse2 = fc.closed_loop_rmse(model, held_x, held_u)
    save_network(model, out / "forecaster.vbnn")
    pred = fc.forecast(model, held_x[:d + 1], held_u[d:], len(held_x) - d - 1, u_history=held_u[:d])
    t = (np.arange(d + 1, len(held_x))) * cfg["signals"]["dt_s"]
    write_csv_matrix(out / "forecast.csv", np.column_stack([t, pred, held_u[d + 1:len(held_x)]]),
                     header=["t", "x_hat_t", "u_t"])
    summary = {"stage1_loss": h1, "stage2_loss": h2, "closed_loop_rmse_stage1": rmse1,
               "closed_loop_rmse_stage2": rmse2, "window": d, "source_model": str(path.relative_to(out))}
    write_json(out / "forecaster_history.json", summary)
    outputs = [out / "forecaster.vbnn", out / "forecast.csv", out / "forecaster_history.json"]
    write_manifest(out, "train-forecaster", cfg, [path, folder / "dataset.vbds"], outputs)
    return {"closed_loop_rmse_stage1": rmse1, "closed_loop_rmse_stage2": rmse2}


def stage_identify(cfg: dict, out: Path, *, source_model=None, workers: int = 1) -> dict:
    path, sae_net, folder, data, meta = _model_and_data(out, source_model)
    fpath = require(out / "forecaster.vbnn")
    model = load_network(fpath)
    ensemble = ensemble_for(cfg, meta["n_devices"])
    sigs = run_signals(cfg, out, meta, ensemble)
    ident = cfg["identification"]
    params = vb.identify(ensemble, sigs, sae_net, model, horizon=ident["power_horizon_s"],
                         tol=ident["power_tol_kw"], precision=ident["precision"], workers=workers)
    params.provenance["sae_model"] = str(path.relative_to(out))
    vb.save_params(params, out / "phi.json")
    write_manifest(out, "identify", cfg, [path, fpath], [out / "phi.json"])
    return params.to_dict()


def stage_report(cfg: dict, out: Path, *, source_model=None) -> dict:
    path, sae_net, folder, data, meta = _model_and_data(out, source_model)
    folder_out = out / "report"
    folder_out.mkdir(exist_ok=True)
    n = meta["n_devices"]
    r = cfg["report"]
    errs = sae_mod.reconstruction_errors(sae_net, data, slice(0, n), bins=r["bins"], max_rows=r["max_rows"],
                                         seed=cfg["seed"])
    edges, counts = errs["hist_edges"], errs["hist_counts"]
    write_csv_matrix(folder_out / "reconstruction_histogram.csv",
                     np.column_stack([edges[:-1], edges[1:], counts]), header=["lo", "hi", "count"])
    write_csv_matrix(folder_out / "device_error_range.csv",
                     np.column_stack([np.arange(n), errs["device_min"], errs["device_max"]]),
                     header=["device", "min_error", "max_error"])
    outputs = [folder_out / "reconstruction_histogram.csv", folder_out / "device_error_range.csv"]
    hist = out / "sae_history.json"
    if hist.is_file():
        loss = read_json(hist)["loss"]
        write_csv_matrix(folder_out / "sae_loss.csv", np.column_stack([np.arange(1, len(loss) + 1), loss]),
                         header=["epoch", "loss"])
        outputs.append(folder_out / "sae_loss.csv")
    summary = {"error_min": errs["min"], "error_max": errs["max"]}
    rep = out / "transfer" / "report.json"
    if rep.is_file():
        tr = read_json(rep)
        rows = [["transfer", tr["transfer_epochs"] or -1, tr["pretrained_parameters"], tr["untrained_parameters"]]]
        if "scratch_epochs" in tr:
            rows.append(["scratch", tr["scratch_epochs"] or -1, 0, tr["total_parameters"]])
        with open(folder_out / "epoch_comparison.csv", "w") as fh:
            fh.write("method,epochs_to_target,pretrained_parameters,untrained_parameters\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        outputs.append(folder_out / "epoch_comparison.csv")
        summary.update(transfer_epochs=tr["transfer_epochs"], scratch_epochs=tr.get("scratch_epochs"))
    write_json(folder_out / "summary.json", summary)
    outputs.append(folder_out / "summary.json")
    write_manifest(out, "report", cfg, [path], outputs)
    return summary
