"""Command line interface.

Subcommands:
    synth    render a synthetic labeled clip into a frame container
    run      estimate pulse and heart rate from a container
    train    train estimator weights on synthetic clips
    bench    compare the learned estimator against classical baselines
    dutysim  replay a sampling trace through the duty-cycle automaton

Exit codes: 0 success, 2 unusable configuration or inputs, 3 numeric failure
during computation, 1 anything else. Verbosity comes from PULSEFORGE_LOG
(error, info, debug; default error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, baselines, synth
from .config import config_hash, load_config, set_path, validate_config
from .container import load_sequence, save_sequence
from .core import BvpSignal
from .dutycycle import (EnergyModel, SamplerConfig, load_trace_csv, run_trace,
                        simulate_energy)
from .errors import (InsufficientDataError, NumericError, ParseError,
                     ProtocolError, ValidationError)
from .network import init_weights, load_weights, save_weights, train
from .network import NetworkConfig
from .pipeline import infer_sequence, make_training_set
from .validation import require

log = logging.getLogger("pulseforge")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("PULSEFORGE_LOG", "error").lower()
    level = _LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# shared plumbing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", help="output directory")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, help="frames per estimation window")
    p.add_argument("--mask", choices=["on", "off"], help="attention masks")
    p.add_argument("--branches", choices=["multi", "adjacent"],
                   help="branch layout")
    p.add_argument("--drop1", type=float, help="dropout after first pool")
    p.add_argument("--drop2", type=float, help="dropout after second pool")
    p.add_argument("--enlarge", type=float, help="face box enlargement ratio")


def _build_config(args: argparse.Namespace, flag_map: dict[str, str]) -> dict:
    cfg = load_config(getattr(args, "config", None))
    for attr, path in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            set_path(cfg, path, val)
    validate_config(cfg)
    return cfg


_COMMON_MAP = {"seed": "seed", "out": "out_dir"}
_MODEL_MAP = {"window": "window_len", "mask": "mask", "branches": "branches",
              "drop1": "drop1", "drop2": "drop2", "enlarge": "enlarge_ratio"}


def _csv_comment(cfg: dict) -> str:
    return f"# seed={cfg['seed']}, config_hash={config_hash(cfg)}\n"


def _write_csv(path: Path, header: str, rows, cfg: dict) -> None:
    with open(path, "w") as f:
        f.write(_csv_comment(cfg))
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def _net_config(cfg: dict) -> NetworkConfig:
    return NetworkConfig(window_len=cfg["window_len"], branches=cfg["branches"],
                         drop1=cfg["drop1"], drop2=cfg["drop2"],
                         norm_order=cfg["norm_order"])


def _load_weights_arg(args, cfg: dict):
    path = getattr(args, "weights", None) or cfg.get("weights")
    require(path is not None, "this command needs --weights (or 'weights' in config)")
    return load_weights(path)


def _synth_training_set(cfg: dict):
    t = cfg["train"]
    seqs = []
    for i, hr in enumerate(t["hrs_bpm"]):
        seqs.append(synth.make_fixture(
            hr_bpm=float(hr), duration_s=t["duration_s"],
            seed=cfg["seed"] + 101 * (i + 1), scenario=t["scenario"],
            fps=cfg["synth"]["fps"], width=cfg["synth"]["width"],
            height=cfg["synth"]["height"],
            sensor_sigma=cfg["synth"]["sensor_sigma"]))
    return make_training_set(seqs, cfg["window_len"],
                             enlarge_ratio=cfg["enlarge_ratio"],
                             stride=t.get("stride"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _build_config(args, {**_COMMON_MAP, "hr": "synth.hr_bpm",
                               "duration": "synth.duration_s",
                               "scenario": "synth.scenario",
                               "fps": "synth.fps"})
    s = cfg["synth"]
    require(s["scenario"] in synth.scenario_names(),
            f"unknown scenario '{s['scenario']}', "
            f"expected one of {synth.scenario_names()}")
    seq = synth.make_fixture(
        hr_bpm=s["hr_bpm"], duration_s=s["duration_s"], seed=cfg["seed"],
        scenario=s["scenario"], fps=s["fps"], width=s["width"],
        height=s["height"], jitter_ms=s["jitter_ms"], waveform=s["waveform"],
        sensor_sigma=s["sensor_sigma"])
    out = Path(cfg["out_dir"])
    save_sequence(seq, out, extra_manifest={
        "seed": cfg["seed"], "config_hash": config_hash(cfg),
        "scenario": s["scenario"], "hr_bpm": s["hr_bpm"]})
    log.info("wrote %d frames to %s", len(seq), out)
    print(f"synth: {len(seq)} frames at {s['fps']} fps -> {out}")
    return 0


def _reinfer(windows, bvp: BvpSignal, span_frames: int, fps: float):
    """Re-estimate HR rows that sit far from the run's median over a longer span."""
    rows = [[st, en, bpm, "fft-peak"] for st, en, bpm in windows]
    if span_frames <= 0 or len(rows) < 3:
        return rows
    med = float(np.median([r[2] for r in rows]))
    half_s = (span_frames / fps) / 2.0
    for r in rows:
        if abs(r[2] - med) <= 10.0:
            continue
        center = (r[0] + r[1]) / 2.0
        i0 = max(0, int(round((center - half_s) * bvp.rate)))
        i1 = min(len(bvp.samples), int(round((center + half_s) * bvp.rate)))
        if i1 - i0 < int(2.0 * bvp.rate):
            continue
        est = analysis.estimate_hr(BvpSignal(bvp.samples[i0:i1], bvp.rate))
        r[2] = est.bpm
        r[3] = "fft-peak-long"
    return rows


def cmd_run(args) -> int:
    cfg = _build_config(args, {**_COMMON_MAP, **_MODEL_MAP,
                               "input": "input.container",
                               "weights": "weights",
                               "reinfer_window": "reinfer_window"})
    container = cfg.get("input", {}).get("container")
    require(container is not None, "run needs --input (or input.container in config)")
    seq = load_sequence(container)
    weights = _load_weights_arg(args, cfg)
    require(weights.cfg.window_len == cfg["window_len"],
            f"weights use window_len={weights.cfg.window_len}, "
            f"config says {cfg['window_len']}")
    use_mask = cfg["mask"] == "on"
    res = infer_sequence(seq, weights, enlarge_ratio=cfg["enlarge_ratio"],
                         use_mask=use_mask, use_shift=cfg["use_shift"])
    hr = analysis.estimate_hr(res.bvp)
    freqs, power = analysis.periodogram(res.bvp)
    windows = analysis.hr_over_windows(res.bvp)
    hr_rows = _reinfer(windows, res.bvp, cfg["reinfer_window"], seq.fps)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ts = res.bvp.times()
    _write_csv(out / "bvp.csv", "t_s,value",
               [(f"{t:.6f}", f"{v:.8g}") for t, v in zip(ts, res.bvp.samples)], cfg)
    _write_csv(out / "hr.csv", "start_s,end_s,bpm,method",
               [(f"{a:.3f}", f"{b:.3f}", f"{bpm:.4f}", m)
                for a, b, bpm, m in hr_rows], cfg)
    _write_csv(out / "periodogram.csv", "freq_hz,power",
               [(f"{f:.6f}", f"{p:.8g}") for f, p in zip(freqs, power)], cfg)

    report = {
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "n_frames": len(seq),
        "fps": seq.fps,
        "hr_bpm": hr.bpm,
        "confidence_band_hz": list(hr.confidence_band_hz),
        "method": hr.method,
        "windows": [{"start_s": a, "end_s": b, "bpm": bpm, "method": m}
                    for a, b, bpm, m in hr_rows],
        "skipped_windows": res.skipped_windows,
    }
    try:
        ibis = analysis.detect_peaks(res.bvp)
        report["pnn50_pct"] = analysis.pnn50(ibis)
        report["mean_hr_bpm"] = analysis.ibi_mean_bpm(ibis).bpm
    except InsufficientDataError:
        report["pnn50_pct"] = None
        report["mean_hr_bpm"] = None
    if seq.ground_truth is not None:
        ref = seq.ground_truth
        true_hr = analysis.estimate_hr(ref).bpm
        rep = analysis.metrics(np.array([hr.bpm]), np.array([true_hr]),
                               pred_bvp=res.bvp, true_hr_for_snr=true_hr,
                               config_hash=config_hash(cfg))
        report["reference"] = {"hr_bpm": true_hr, "mae_bpm": rep.mae_bpm,
                               "snr_db": rep.snr_db}
        ref_frame = np.interp(np.asarray(seq.timestamps()), ref.times(), ref.samples)
        ref_frame = (ref_frame - ref_frame.mean())
        sd = ref_frame.std()
        if sd > 1e-12:
            ref_frame /= sd
        _write_csv(out / "overlay.csv", "t_s,pred,reference",
                   [(f"{t:.6f}", f"{p:.8g}", f"{r:.8g}")
                    for t, p, r in zip(ts, res.bvp.samples, ref_frame)], cfg)
    report["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print(f"run: hr={hr.bpm:.2f} bpm over {len(seq)} frames -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args, {**_COMMON_MAP, **_MODEL_MAP,
                               "epochs": "train.epochs"})
    dataset = _synth_training_set(cfg)
    log.info("training on %d windows", dataset[0].shape[0])
    w0 = init_weights(_net_config(cfg), cfg["seed"])
    losses_rows = []

    def log_cb(epoch, loss):
        log.info("epoch %d loss %.6f", epoch, loss)
        losses_rows.append((epoch, f"{loss:.8g}"))

    result = train(dataset, weights=w0, epochs=cfg["train"]["epochs"],
                   batch_size=cfg["train"]["batch_size"], lr=cfg["train"]["lr"],
                   seed=cfg["seed"], use_mask=cfg["mask"] == "on",
                   use_shift=cfg["use_shift"], log_cb=log_cb)
    out = Path(cfg["out_dir"])
    save_weights(result.weights, out)
    _write_csv(out / "training_log.csv", "epoch,loss", losses_rows, cfg)
    print(f"train: {len(result.epoch_losses)} epochs, "
          f"final loss {result.epoch_losses[-1]:.6f} -> {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _build_config(args, {**_COMMON_MAP, **_MODEL_MAP, "weights": "weights"})
    if args.scenarios:
        cfg["bench"]["scenarios"] = [s.strip() for s in args.scenarios.split(",")
                                     if s.strip()]
        validate_config(cfg)
    weights = _load_weights_arg(args, cfg)
    scenarios = cfg["bench"]["scenarios"]
    for s in scenarios:
        require(s in synth.scenario_names(), f"unknown scenario '{s}'")
    hrs = [cfg["bench"]["hr_bpm"] * f for f in (0.8, 1.0, 1.25)]
    use_mask = cfg["mask"] == "on"
    table_rows = []
    ba_rows = []
    for scenario in scenarios:
        fixtures = [synth.make_fixture(
            hr_bpm=hr, duration_s=cfg["bench"]["duration_s"],
            seed=cfg["seed"] + 17 * (k + 1), scenario=scenario,
            fps=cfg["synth"]["fps"], width=cfg["synth"]["width"],
            height=cfg["synth"]["height"],
            sensor_sigma=cfg["synth"]["sensor_sigma"])
            for k, hr in enumerate(hrs)]
        truths = [analysis.estimate_hr(f.ground_truth).bpm for f in fixtures]
        methods: dict[str, list[BvpSignal]] = {}
        methods["shiftnet"] = [
            infer_sequence(f, weights, enlarge_ratio=cfg["enlarge_ratio"],
                           use_mask=use_mask, use_shift=cfg["use_shift"]).bvp
            for f in fixtures]
        for name, fn in baselines.BASELINES.items():
            methods[name] = [fn(f) for f in fixtures]
        for name in ("shiftnet", "green", "chrom", "pos"):
            preds = [analysis.estimate_hr(b).bpm for b in methods[name]]
            snrs = [analysis.snr_db(b, t) for b, t in zip(methods[name], truths)]
            rep = analysis.metrics(np.array(preds), np.array(truths),
                                   config_hash=config_hash(cfg))
            rep = replace(rep, snr_db=float(np.mean(snrs)))
            table_rows.append((scenario, name, f"{rep.mae_bpm:.4f}",
                               f"{rep.mape_pct:.4f}", f"{rep.rmse_bpm:.4f}",
                               f"{rep.pearson_r:.6f}", f"{rep.snr_db:.4f}"))
            for t, p in zip(truths, preds):
                ba_rows.append((scenario, name, f"{t:.4f}", f"{p:.4f}",
                                f"{(t + p) / 2:.4f}", f"{p - t:.4f}"))
            log.info("bench %s/%s mae=%.3f", scenario, name, rep.mae_bpm)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "table.csv",
               "scenario,method,mae_bpm,mape_pct,rmse_bpm,pearson_r,snr_db",
               table_rows, cfg)
    _write_csv(out / "bland_altman.csv",
               "scenario,method,true_bpm,pred_bpm,mean_bpm,diff_bpm",
               ba_rows, cfg)
    print(f"bench: {len(scenarios)} scenarios x 4 methods -> {out}")
    return 0


def cmd_dutysim(args) -> int:
    cfg = _build_config(args, _COMMON_MAP)
    events = load_trace_csv(args.trace)
    require(len(events) > 0, "trace holds no events")
    s = cfg["sampler"]
    scfg = SamplerConfig(
        fps=s["fps"], no_face_limit_frames=s["no_face_limit_frames"],
        sleep_duration_s=s["sleep_duration_s"],
        pnn50_enter_threshold_pct=s["pnn50_enter_threshold_pct"],
        pnn50_exit_threshold_pct=s["pnn50_exit_threshold_pct"],
        min_hrv_window_s=s["min_hrv_window_s"],
        hr_change_trigger_bpm=s["hr_change_trigger_bpm"],
        exit_no_face_frames=s["exit_no_face_frames"])
    e = cfg["energy"]
    model = EnergyModel(p_sample_w=e["p_sample_w"], p_sleep_w=e["p_sleep_w"],
                        p_infer_w=e["p_infer_w"])
    trace = run_trace(events, scfg)
    energy = simulate_energy(events, scfg, model)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "actions.csv", "timestamp,mode,action",
               [(f"{ev.timestamp:.6f}", st.mode.value, act.value)
                for ev, (st, act) in zip(events, trace)], cfg)
    report = {"seed": cfg["seed"], "config_hash": config_hash(cfg),
              "n_events": len(events), **energy,
              "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(out / "energy_report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print(f"dutysim: duty_ratio={energy['duty_ratio']:.4f} "
          f"saving={energy['saving_fraction'] * 100:.1f}% -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulseforge",
                                description="camera pulse estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="render a synthetic labeled clip")
    _add_common(ps)
    ps.add_argument("--hr", type=float, help="target heart rate, bpm")
    ps.add_argument("--duration", type=float, help="clip length, seconds")
    ps.add_argument("--scenario", help="scenario preset name")
    ps.add_argument("--fps", type=int, help="frame rate")
    ps.set_defaults(fn=cmd_synth)

    pr = sub.add_parser("run", help="estimate pulse from a frame container")
    _add_common(pr)
    _add_model_flags(pr)
    pr.add_argument("--input", help="frame container directory")
    pr.add_argument("--weights", help="trained weights directory or manifest")
    pr.add_argument("--reinfer-window", dest="reinfer_window", type=int,
                    help="frames for re-estimating outlier HR windows (0 = off)")
    pr.set_defaults(fn=cmd_run)

    pt = sub.add_parser("train", help="train estimator weights")
    _add_common(pt)
    _add_model_flags(pt)
    pt.add_argument("--epochs", type=int, help="training epochs")
    pt.set_defaults(fn=cmd_train)

    pb = sub.add_parser("bench", help="compare methods across scenarios")
    _add_common(pb)
    _add_model_flags(pb)
    pb.add_argument("--weights", help="trained weights directory or manifest")
    pb.add_argument("--scenarios", help="comma-separated scenario names")
    pb.set_defaults(fn=cmd_bench)

    pd = sub.add_parser("dutysim", help="replay a sampling trace")
    pd.add_argument("trace", help="event trace CSV")
    _add_common(pd)
    pd.set_defaults(fn=cmd_dutysim)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (ValidationError, ParseError, ProtocolError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # pragma: no cover - last-resort guard
        log.exception("unhandled failure")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
