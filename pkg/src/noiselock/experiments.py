"""Experiment drivers behind ``noiselock run``.

Each experiment kind has a compute function returning plain arrays and
numbers, and :func:`run_experiment` writes them out as CSV (canonical), SVG
(convenience) and a ``summary.json`` whose verdicts use only the tolerances
declared in the configuration.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernel, svg
from .analytic import LockPoint, stability_coherent, stability_homodyne_scaled
from .config import ExperimentConfig, ExperimentKind
from .dsp import ErrorSignalFit, welch_psd
from .loop import (
    ErrorSource,
    LoopSimulator,
    averaging_samples,
    bandwidth_product,
    lock_period,
    lock_report,
    lock_window,
    measure_stability,
    open_loop_error,
    predicted_error,
    predicted_slope,
    run_closed_loop,
    stable_lock_points,
    target_phase,
)
from .timeseries import Mode, config_digest, mean_and_variance

ALTERNATE = {
    LockPoint.SQUEEZED: LockPoint.ANTI_SQUEEZED,
    LockPoint.ANTI_SQUEEZED: LockPoint.SQUEEZED,
    LockPoint.DARK_FRINGE: LockPoint.BRIGHT_FRINGE,
    LockPoint.BRIGHT_FRINGE: LockPoint.DARK_FRINGE,
}


@dataclass
class Verdict:
    name: str
    passed: bool
    value: float
    tolerance: str

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": _num(self.value), "tolerance": self.tolerance}


@dataclass
class ExperimentResult:
    kind: ExperimentKind
    metrics: dict
    verdicts: list
    tables: dict = field(default_factory=dict)  # name -> (columns dict, plot spec or None)
    reports: dict = field(default_factory=dict)  # name -> text

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def _circ_dist(a, b, period):
    d = (a - b) % period
    return min(d, period - d)


def expected_crossings(synth):
    if synth.mode is Mode.HOMODYNE:
        return np.array([0.0, math.pi / 2])
    return np.array([math.pi / 2, 3 * math.pi / 2])


def theta_grid(synth, n):
    return np.arange(n) * lock_period(synth) / n


def _to_db(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return 10 * np.log10(x)


# ---------------------------------------------------------------- sweep_theta


def fit_error_curve(synth, theta, eps):
    """Single-gain fit to the expected shape plus a free-phase fit for the zero crossings.

    Returns a dict with the gain, relative RMS/max residuals and the fitted
    zero crossings in ``[0, period)``.
    """
    period = lock_period(synth)
    homodyne = synth.mode is Mode.HOMODYNE
    est = ErrorSignalFit(harmonic=2 if homodyne else 1, kind="sin" if homodyne else "cos")
    gain, rms, mx = est.fit_gain(theta, eps)
    est.fit(theta, eps)
    crossings = est.zero_crossings(period)
    exp = expected_crossings(synth)
    err = max(min(_circ_dist(c, e, period) for c in crossings) for e in exp)
    return {
        "gain": gain,
        "rms_residual": rms / abs(gain),
        "max_residual": mx / abs(gain),
        "zero_crossings": crossings,
        "crossing_error": err,
    }


def sweep_theta(cfg: ExperimentConfig):
    synth = cfg.synthesis()
    chain = cfg.chain()
    theta = theta_grid(synth, cfg.run.n_points)
    _, var = mean_and_variance(synth.plant_coefficients(), theta)
    analytic = predicted_error(synth, chain, theta)
    cols = {"theta0": theta, "variance_db": _to_db(var), "error_analytic": analytic}
    fit_a = fit_error_curve(synth, theta, analytic)
    metrics = {"analytic_zero_crossings": fit_a["zero_crossings"].tolist()}
    fit = fit_a
    if cfg.run.n_seeds > 0:
        curve = open_loop_error(synth, chain, theta, duration=cfg.duration, settle=cfg.settle)
        cols["error_mc"] = curve.epsilon
        cols["error_mc_stderr"] = curve.stderr
        fit = fit_error_curve(synth, theta, curve.epsilon)
        metrics.update(
            mc_gain=fit["gain"],
            mc_rms_residual=fit["rms_residual"],
            mc_max_residual=fit["max_residual"],
            mc_zero_crossings=fit["zero_crossings"].tolist(),
        )
    tol = cfg.tolerances
    verdicts = [
        Verdict("zero_crossings", fit["crossing_error"] <= tol.zero_crossing, fit["crossing_error"],
                f"<= {tol.zero_crossing} rad"),
        Verdict("shape_residual", fit["rms_residual"] < tol.shape_residual, fit["rms_residual"],
                f"< {tol.shape_residual} of fitted gain"),
    ]  # fmt: skip
    plots = {
        "sweep_variance": ("theta0", ["variance_db"], "noise variance vs phase", "theta0 (rad)", "V (dB re SNL)"),
        "sweep_error": ("theta0", [c for c in cols if c.startswith("error_") and "stderr" not in c],
                        "error signal vs phase", "theta0 (rad)", "error (arb.)"),
    }  # fmt: skip
    return ExperimentResult(ExperimentKind.SWEEP_THETA, metrics, verdicts, {"sweep": (cols, plots)})


# ---------------------------------------------------------------- lock_acquire


def _fringe_power_c(synth, theta):
    """Mean photocurrent on the complementary port (the monitor detector)."""
    if synth.mode is not Mode.COHERENT:
        return None
    other = "c" if synth.port.value == "d" else "d"
    m0, m1, *_ = synth.replace(port=other).plant_coefficients()
    return m0 + m1 * np.sin(theta)


def lock_single(cfg):
    synth = cfg.synthesis()
    chain = cfg.chain()
    servo = cfg.servo_config(synth, chain)
    target = target_phase(synth, cfg.servo.lock_point)
    trace, report = run_closed_loop(
        synth, chain, servo, cfg.duration, record_every=cfg.run.record_every,
        lock_threshold=cfg.tolerances.lock_threshold,
    )  # fmt: skip
    t = trace.time
    cols = {
        "time": t,
        "true_phase": trace["true_phase"],
        "error_signal": trace["error_signal"],
        "control": trace["control"],
    }
    mon = _fringe_power_c(synth, trace["true_phase"])
    if mon is not None:
        cols["monitor_dc"] = mon
    start = report.acquisition_time if report.acquired else servo.engage_time + lock_window(synth, chain, servo)
    after = t >= start
    err_after = trace["error_signal"][after]
    blocks = np.array_split(err_after, 20) if err_after.size >= 40 else [err_after]
    means = np.array([b.mean() for b in blocks])
    mean_err = float(err_after.mean()) if err_after.size else math.nan
    sem = float(means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else math.nan
    period = lock_period(synth)
    on_target = report.acquired and _circ_dist(report.lock_point, target, period) < cfg.tolerances.lock_threshold
    metrics = {
        "acquired": report.acquired,
        "acquisition_time_s": report.acquisition_time,
        "engage_time_s": servo.engage_time,
        "lock_point": report.lock_point,
        "target_phase": target,
        "residual_rms_true": report.residual_rms_true,
        "residual_rms_inloop": report.residual_rms_inloop,
        "post_lock_error_mean": mean_err,
        "post_lock_error_sem": sem,
    }
    verdicts = [
        Verdict("acquired_commanded_lock_point", on_target, report.lock_point, f"within {cfg.tolerances.lock_threshold} rad of {target:.6g}"),
        Verdict("post_lock_error_mean_zero", abs(mean_err) < 3 * sem, mean_err, "|mean| < 3 sem"),
    ]  # fmt: skip
    plots = {"lock_trace": ("time", ["error_signal"], "lock acquisition", "time (s)", "error (arb.)"),
             "lock_phase": ("time", ["true_phase"], "true phase", "time (s)", "phase (rad)")}  # fmt: skip
    result = ExperimentResult(ExperimentKind.LOCK_ACQUIRE, metrics, verdicts, {"trace": (cols, plots)})
    result.reports["lock_report"] = report.to_text()
    return result


def acquisition_ensemble(cfg, n_runs=None, hold_time=None):
    """Lock from random initial phases, then again with the demodulation phase flipped by pi.

    Returns per-run arrays and the two headline fractions.
    """
    n_runs = n_runs or cfg.run.n_runs
    synth0 = cfg.synthesis()
    chain = cfg.chain()
    servo = cfg.servo_config(synth0, chain)
    period = lock_period(synth0)
    target = target_phase(synth0, cfg.servo.lock_point)
    alternate = target_phase(synth0, ALTERNATE[cfg.servo.lock_point])
    ref = chain.compensating_phase(synth0.fs, synth0.modulation.freq_hz)
    if synth0.modulation.demod_phase is not None:
        ref = synth0.modulation.demod_phase
    gen = np.random.default_rng(cfg.experiment.seed)
    spread = cfg.run.initial_phase_spread
    starts = synth0.modulation.theta0 + spread * (gen.random(n_runs) - 0.5)
    hold = hold_time if hold_time is not None else lock_window(synth0, chain, servo) * 2
    thr = cfg.tolerances.lock_threshold
    rows = {k: np.zeros(n_runs) for k in ("initial_phase", "acquired", "acquisition_time", "lock_point",
                                          "flipped_acquired", "flipped_lock_point")}  # fmt: skip
    for i in range(n_runs):
        base = synth0.replace(seed=synth0.seed + i).with_modulation(theta0=float(starts[i]))
        _, rep = run_closed_loop(base, chain, servo, cfg.duration, record_every=cfg.run.record_every,
                                 lock_threshold=thr, hold_time=hold)  # fmt: skip
        flipped = base.with_modulation(demod_phase=ref + math.pi)
        _, rep_f = run_closed_loop(flipped, chain, servo, cfg.duration, record_every=cfg.run.record_every,
                                   lock_threshold=thr, hold_time=hold)  # fmt: skip
        rows["initial_phase"][i] = starts[i]
        rows["acquired"][i] = rep.acquired and _circ_dist(rep.lock_point, target, period) < thr
        rows["acquisition_time"][i] = rep.acquisition_time
        rows["lock_point"][i] = rep.lock_point
        rows["flipped_acquired"][i] = rep_f.acquired
        rows["flipped_lock_point"][i] = rep_f.lock_point
    conv = rows["flipped_acquired"].astype(bool)
    alt_ok = np.array([_circ_dist(p, alternate, period) < thr for p in rows["flipped_lock_point"][conv]])
    return {
        "rows": rows,
        "acquired_fraction": float(rows["acquired"].mean()),
        "flipped_converged": int(conv.sum()),
        "flipped_alternate_fraction": float(alt_ok.mean()) if alt_ok.size else math.nan,
        "target": target,
        "alternate": alternate,
    }


def lock_acquire(cfg):
    if cfg.run.n_runs == 1:
        return lock_single(cfg)
    ens = acquisition_ensemble(cfg)
    tol = cfg.tolerances
    metrics = {k: v for k, v in ens.items() if k != "rows"}
    verdicts = [
        Verdict("acquired_fraction", ens["acquired_fraction"] >= tol.acquire_fraction, ens["acquired_fraction"],
                f">= {tol.acquire_fraction}"),
        Verdict("flip_selects_alternate", ens["flipped_alternate_fraction"] == 1.0, ens["flipped_alternate_fraction"],
                "== 1 over converged runs"),
    ]  # fmt: skip
    return ExperimentResult(ExperimentKind.LOCK_ACQUIRE, metrics, verdicts, {"acquisition": (ens["rows"], {})})


# ---------------------------------------------------------------- stability


def analytic_stability_table(cfg, squeeze_factors=None, loss_values=None):
    synth = cfg.synthesis()
    chain = cfg.chain()
    avg = cfg.seconds(cfg.run.averaging_time) if cfg.run.averaging_time else None
    n = bandwidth_product(synth, chain, averaging_samples(synth, chain, avg))
    rs = np.asarray(squeeze_factors or cfg.run.squeeze_factors, float)
    cols = {"squeeze_factor": rs}
    for lam in loss_values or cfg.run.loss_values:
        pairs = np.array([stability_homodyne_scaled(r, lam, n) for r in rs])
        cols[f"squeezed_lambda_{lam:g}"] = pairs[:, 0]
        cols[f"anti_lambda_{lam:g}"] = pairs[:, 1]
    return cols, n


def _mc_stability(cfg, synth, chain, lock_point, seeds):
    avg = cfg.seconds(cfg.run.averaging_time) if cfg.run.averaging_time else None
    return measure_stability(
        synth, chain, lock_point, seeds=seeds, duration=cfg.duration, settle=cfg.settle,
        averaging_time=avg, ugf_hz=cfg.hz(cfg.servo.ugf_hz), lock_threshold=cfg.tolerances.lock_threshold,
    )  # fmt: skip


def _seeds(cfg):
    return list(range(cfg.experiment.seed, cfg.experiment.seed + cfg.run.n_seeds))


def stability_vs_r(cfg):
    cols, n = analytic_stability_table(cfg)
    ordered = all(
        np.all(cols[f"squeezed_lambda_{lam:g}"] < cols[f"anti_lambda_{lam:g}"]) for lam in cfg.run.loss_values
    )
    metrics = {"bandwidth_product": n}
    verdicts = [Verdict("squeezed_below_anti_analytic", ordered, float(ordered), "all points")]
    if cfg.run.n_seeds >= 10:
        chain = cfg.chain()
        mc_sq, mc_an = [], []
        for r in cfg.run.squeeze_factors:
            synth = cfg.synthesis(squeezed=cfg.squeezed_spec(squeeze_factor=r))
            mc_sq.append(_mc_stability(cfg, synth, chain, LockPoint.SQUEEZED, _seeds(cfg)).delta_theta)
            mc_an.append(_mc_stability(cfg, synth, chain, LockPoint.ANTI_SQUEEZED, _seeds(cfg)).delta_theta)
        cols["squeezed_mc"] = np.array(mc_sq)
        cols["anti_mc"] = np.array(mc_an)
        ok = bool(np.all(cols["squeezed_mc"] < cols["anti_mc"]))
        verdicts.append(Verdict("squeezed_below_anti_mc", ok, float(ok), "all points"))
    plots = {"stability_vs_R": ("squeeze_factor", [c for c in cols if c != "squeeze_factor"],
                                "lock stability vs squeeze factor", "R", "dtheta (rad)")}  # fmt: skip
    return ExperimentResult(ExperimentKind.STABILITY_VS_R, metrics, verdicts, {"stability_vs_R": (cols, plots)})


def loss_sweep(cfg, seeds=None):
    """Monte Carlo and analytic stability of both lock points at each loss, matched seeds."""
    chain = cfg.chain()
    seeds = seeds or _seeds(cfg)
    lams = np.asarray(cfg.run.loss_values, float)
    out = {"loss_lambda": lams}
    for lp, key in ((LockPoint.SQUEEZED, "squeezed"), (LockPoint.ANTI_SQUEEZED, "anti")):
        mc, se, an = [], [], []
        for lam in lams:
            synth = cfg.synthesis(squeezed=cfg.squeezed_spec(loss_lambda=float(lam)))
            est = _mc_stability(cfg, synth, chain, lp, seeds)
            mc.append(est.delta_theta)
            se.append(est.stderr)
            sq, anti = stability_homodyne_scaled(cfg.plant.squeeze_factor, float(lam), est.bandwidth_product)
            an.append(sq if lp is LockPoint.SQUEEZED else anti)
        out[f"{key}_mc"], out[f"{key}_mc_stderr"], out[f"{key}_analytic"] = map(np.array, (mc, se, an))
    return out


def _increasing(x):
    return bool(np.all(np.diff(x) > 0))


def stability_vs_loss(cfg):
    cols = loss_sweep(cfg)
    order = np.argsort(cols["loss_lambda"])
    verdicts = []
    for key in ("squeezed", "anti"):
        for kind in ("analytic", "mc"):
            ok = _increasing(cols[f"{key}_{kind}"][order])
            verdicts.append(Verdict(f"{key}_{kind}_increases_with_loss", ok, float(ok), "strictly increasing"))
    plots = {"stability_vs_loss": ("loss_lambda", ["squeezed_mc", "squeezed_analytic", "anti_mc", "anti_analytic"],
                                   "lock stability vs loss", "lambda", "dtheta (rad)")}  # fmt: skip
    return ExperimentResult(ExperimentKind.STABILITY_VS_LOSS, {}, verdicts, {"stability_vs_loss": (cols, plots)})


def bandwidth_sweep(cfg, seeds=None, lock_point=None):
    """Monte Carlo stability versus detection bandwidth; returns columns and the log-log slope."""
    seeds = seeds or _seeds(cfg)
    lock_point = lock_point or cfg.servo.lock_point
    synth = cfg.synthesis()
    bws = np.asarray(cfg.run.bandwidths, float)
    mc, se, nprod = [], [], []
    for bw in bws:
        chain = cfg.chain(f_high=cfg.bandpass.f_low + bw)
        est = _mc_stability(cfg, synth, chain, lock_point, seeds)
        mc.append(est.delta_theta)
        se.append(est.stderr)
        nprod.append(est.bandwidth_product)
    cols = {"bandwidth_hz": bws * cfg.scale, "dtheta_mc": np.array(mc), "dtheta_mc_stderr": np.array(se),
            "bandwidth_product": np.array(nprod)}  # fmt: skip
    slope = float(np.polyfit(np.log(bws), np.log(cols["dtheta_mc"]), 1)[0])
    return cols, slope


def stability_vs_bandwidth(cfg):
    cols, slope = bandwidth_sweep(cfg)
    tol = cfg.tolerances
    ok = abs(slope - tol.bandwidth_slope) <= tol.bandwidth_slope_tol
    verdicts = [Verdict("loglog_slope", ok, slope, f"{tol.bandwidth_slope} +- {tol.bandwidth_slope_tol}")]
    plots = {"stability_vs_bandwidth": ("bandwidth_hz", ["dtheta_mc"], "lock stability vs bandwidth",
                                        "bandwidth (Hz, scaled)", "dtheta (rad)")}  # fmt: skip
    return ExperimentResult(ExperimentKind.STABILITY_VS_BANDWIDTH, {"loglog_slope": slope}, verdicts,
                            {"stability_vs_bandwidth": (cols, plots)})  # fmt: skip


# ---------------------------------------------------------------- spectra


def inloop_spectra(cfg, lock_points=(LockPoint.SQUEEZED, LockPoint.ANTI_SQUEEZED)):
    """Error-signal PSDs recorded while locked to each of ``lock_points``."""
    chain = cfg.chain()
    fs_rec = None
    out = {}
    reports = {}
    for lp in lock_points:
        base = cfg.synthesis()
        synth = base.with_modulation(theta0=target_phase(base, lp))
        servo = cfg.servo_config(synth, chain, lock_point=lp)
        sim = LoopSimulator(synth, chain, servo, record_every=cfg.run.record_every)
        sim.advance(int(round((cfg.settle + cfg.duration) * synth.fs)))
        fs_rec = synth.fs / cfg.run.record_every
        rec = sim.records()
        err = rec[int(round(cfg.settle * fs_rec)) :, _kernel.REC_ERR]
        seg = min(len(err), int(round(cfg.seconds(cfg.run.segment_time) * fs_rec)))
        f, p = welch_psd(err - err.mean(), fs_rec, segment=seg)
        out[lp] = (f, p)
        slope = predicted_slope(synth, chain, target_phase(synth, lp))
        reports[lp] = lock_report(sim, stable_lock_points(synth, chain, servo), slope=slope,
                                  threshold=cfg.tolerances.lock_threshold)  # fmt: skip
    return out, reports


def spectrum_inloop(cfg):
    spectra, reports = inloop_spectra(cfg)
    f, p_sq = spectra[LockPoint.SQUEEZED]
    _, p_an = spectra[LockPoint.ANTI_SQUEEZED]
    ugf = cfg.hz(cfg.servo.ugf_hz)
    low = (f > 0) & (f < ugf)
    above_all = bool(np.all(p_an[low] > p_sq[low]))
    tol = cfg.tolerances
    verdicts = [Verdict("anti_above_squeezed_below_ugf", above_all, float(np.min(_to_db(p_an[low] / p_sq[low]))),
                        "> 0 dB in every bin below the UGF")]  # fmt: skip
    metrics = {"ugf_hz": ugf}
    for lp, p in ((LockPoint.SQUEEZED, p_sq), (LockPoint.ANTI_SQUEEZED, p_an)):
        sup = loop_suppression_db(f, p, ugf)
        metrics[f"suppression_db_{lp.value}"] = sup
        verdicts.append(Verdict(f"loop_suppression_{lp.value}", sup >= tol.loop_suppression_db, sup,
                                f">= {tol.loop_suppression_db} dB"))  # fmt: skip
        metrics[f"acquired_{lp.value}"] = reports[lp].acquired
        verdicts.append(Verdict(f"locked_{lp.value}", reports[lp].acquired, float(reports[lp].acquired), "locked"))
    cols = {"freq_hz": f, "psd_squeezed_db": _to_db(p_sq), "psd_anti_db": _to_db(p_an)}
    plots = {"inloop_spectra": ("freq_hz", ["psd_anti_db", "psd_squeezed_db"], "in-loop error spectra",
                                "frequency (Hz, scaled)", "PSD (dB re 1/Hz, arb.)")}  # fmt: skip
    keep = f > 0
    cols = {k: v[keep] for k, v in cols.items()}
    return ExperimentResult(ExperimentKind.SPECTRUM_INLOOP, metrics, verdicts, {"inloop_spectra": (cols, plots)})


def loop_suppression_db(f, p, ugf):
    """How far the in-loop error PSD well below the UGF sits under the band just above it."""
    low = (f > 0) & (f <= ugf / 4)
    high = (f >= ugf) & (f <= 3 * ugf)
    if not low.any() or not high.any():
        return math.nan
    return float(10 * np.log10(np.mean(p[high]) / np.mean(p[low])))


# ---------------------------------------------------------------- NL vs CML


def nl_vs_cml(cfg, duration=None, lock_point=None):
    """Phase-equivalent noise of the NL and CML error signals for one coherent plant.

    The plant sits at the lock point with the loop open (no disturbance is
    applied), so both readouts see the same phase. Each error PSD is divided
    by its predicted slope squared and averaged up to the lock-in corner.
    """
    base = cfg.synthesis()
    if base.mode is not Mode.COHERENT:
        raise ValueError("the NL/CML comparison needs a coherent plant")
    chain = cfg.chain()
    lp = lock_point or cfg.servo.lock_point
    theta = target_phase(base, lp)
    synth = base.with_modulation(theta0=theta)
    sim = LoopSimulator(synth, chain, None, record_every=cfg.run.record_every, with_cml=True)
    dur = cfg.duration if duration is None else duration
    sim.advance(int(round((max(cfg.settle, 10 * chain.lockin.time_constant) + dur) * synth.fs)))
    fs_rec = synth.fs / cfg.run.record_every
    # the CML lock-in starts with a transient of order DC / (Omega tau); let it decay
    skip = max(cfg.settle, 10 * chain.lockin.time_constant)
    rec = sim.records()[int(round(skip * fs_rec)) :]
    s_nl = predicted_slope(synth, chain, theta, ErrorSource.NL)
    s_cml = predicted_slope(synth, chain, theta, ErrorSource.CML)
    seg = min(len(rec), int(round(cfg.seconds(cfg.run.segment_time) * fs_rec)))
    f, p_nl = welch_psd(rec[:, _kernel.REC_ERR] - rec[:, _kernel.REC_ERR].mean(), fs_rec, segment=seg)
    _, p_cml = welch_psd(rec[:, _kernel.REC_AUX] - rec[:, _kernel.REC_AUX].mean(), fs_rec, segment=seg)
    ph_nl, ph_cml = p_nl / s_nl**2, p_cml / s_cml**2
    band = (f > 0) & (f <= chain.lockin.corner_hz)
    if band.sum() < 2:
        band = (f > 0) & (f <= f[2])
    ratio_db = float(10 * np.log10(np.mean(ph_nl[band]) / np.mean(ph_cml[band])))
    return {"freq_hz": f, "nl_phase_psd": ph_nl, "cml_phase_psd": ph_cml, "ratio_db": ratio_db,
            "slope_nl": s_nl, "slope_cml": s_cml}  # fmt: skip


def fringe_ratio(cfg, seeds=None):
    """Bright- over dark-fringe NL stability, as a noise-power ratio in dB."""
    synth = cfg.synthesis()
    chain = cfg.chain()
    seeds = seeds or _seeds(cfg)
    dark = _mc_stability(cfg, synth, chain, LockPoint.DARK_FRINGE, seeds)
    bright = _mc_stability(cfg, synth, chain, LockPoint.BRIGHT_FRINGE, seeds)
    ratio = 20 * math.log10(bright.delta_theta / dark.delta_theta)
    pd, pb = stability_coherent(synth.coherent, dark.bandwidth_product)
    return {"dark": dark, "bright": bright, "ratio_db": ratio, "analytic_ratio_db": 20 * math.log10(pb / pd)}


def coherent_vs_cml(cfg):
    res = nl_vs_cml(cfg)
    tol = cfg.tolerances
    metrics = {"nl_over_cml_db": res["ratio_db"], "slope_nl": res["slope_nl"], "slope_cml": res["slope_cml"]}
    verdicts = [Verdict("nl_noisier_than_cml", res["ratio_db"] >= tol.cml_margin_db, res["ratio_db"],
                        f">= {tol.cml_margin_db} dB")]  # fmt: skip
    if cfg.run.n_seeds >= 10:
        fr = fringe_ratio(cfg)
        metrics.update(fringe_ratio_db=fr["ratio_db"], fringe_ratio_analytic_db=fr["analytic_ratio_db"])
        ok = abs(fr["ratio_db"] - tol.fringe_ratio_db) <= tol.fringe_ratio_tol_db
        verdicts.append(Verdict("bright_over_dark_db", ok, fr["ratio_db"],
                                f"{tol.fringe_ratio_db} +- {tol.fringe_ratio_tol_db} dB"))  # fmt: skip
    f = res["freq_hz"]
    keep = f > 0
    cols = {"freq_hz": f[keep], "nl_phase_psd_db": _to_db(res["nl_phase_psd"][keep]),
            "cml_phase_psd_db": _to_db(res["cml_phase_psd"][keep])}  # fmt: skip
    plots = {"nl_vs_cml": ("freq_hz", ["nl_phase_psd_db", "cml_phase_psd_db"], "phase-equivalent error noise",
                           "frequency (Hz, scaled)", "PSD (dB re 1 rad^2/Hz)")}  # fmt: skip
    return ExperimentResult(ExperimentKind.COHERENT_VS_CML, metrics, verdicts, {"nl_vs_cml": (cols, plots)})


# ---------------------------------------------------------------- driver

_RUNNERS = {
    ExperimentKind.SWEEP_THETA: sweep_theta,
    ExperimentKind.LOCK_ACQUIRE: lock_acquire,
    ExperimentKind.STABILITY_VS_R: stability_vs_r,
    ExperimentKind.STABILITY_VS_LOSS: stability_vs_loss,
    ExperimentKind.STABILITY_VS_BANDWIDTH: stability_vs_bandwidth,
    ExperimentKind.SPECTRUM_INLOOP: spectrum_inloop,
    ExperimentKind.COHERENT_VS_CML: coherent_vs_cml,
}


def compute(cfg):
    return _RUNNERS[cfg.experiment.kind](cfg)


def write_csv(path, columns, meta):
    """Comment header with metadata, then one row per sample (``%.12g``)."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    with open(path, "w", newline="") as fh:
        for k in sorted(meta):
            fh.write(f"# {k} = {meta[k]}\n")
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(format(v, ".12g") for v in row) + "\n")


def run_experiment(cfg: ExperimentConfig, out_dir=None, name=None):
    """Run ``cfg`` and write its artifacts; returns the summary dict."""
    out_dir = out_dir or cfg.experiment.output_dir
    os.makedirs(out_dir, exist_ok=True)
    result = compute(cfg)
    digest = config_digest(cfg)
    meta = {
        "config_hash": digest,
        "seed": cfg.experiment.seed,
        "scale_factor": repr(cfg.scale),
        "version": __version__,
        "experiment": cfg.experiment.kind.value,
    }
    files = []
    for table, (cols, plots) in result.tables.items():
        path = os.path.join(out_dir, f"{table}.csv")
        write_csv(path, cols, meta)
        files.append(os.path.basename(path))
        for plot_name, (xkey, ykeys, title, xl, yl) in (plots or {}).items():
            p = os.path.join(out_dir, f"{plot_name}.svg")
            logx = xkey in ("freq_hz", "bandwidth_hz")
            svg.line_plot(p, cols[xkey], {k: cols[k] for k in ykeys}, title=title, xlabel=xl, ylabel=yl, logx=logx)
            files.append(os.path.basename(p))
    for rname, text in result.reports.items():
        with open(os.path.join(out_dir, f"{rname}.txt"), "w") as fh:
            fh.write(text)
        files.append(f"{rname}.txt")
    summary = {
        "name": name or cfg.experiment.kind.value,
        "experiment": cfg.experiment.kind.value,
        "config_hash": digest,
        "seed": cfg.experiment.seed,
        "scale_factor": cfg.scale,
        "fs_hz": cfg.fs,
        "version": __version__,
        "metrics": {k: _num(v) if not isinstance(v, list) else [_num(x) for x in v] for k, v in result.metrics.items()},
        "verdicts": [v.as_dict() for v in result.verdicts],
        "passed": result.passed,
        "files": sorted(files),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
