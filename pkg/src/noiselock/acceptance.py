"""Acceptance suite: twelve end-to-end checks with pinned tolerances.

Each ``criterion_N`` function runs its protocol and returns a
:class:`CriterionResult`. ``noiselock selftest`` and
``tests/test_acceptance.py`` both drive :func:`run_all`.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .analytic import LockPoint, stability_homodyne_scaled
from .config import ExperimentKind
from .dsp import BandpassFilter, EnvelopeDetector, LockInAmplifier, welch_psd
from .experiments import (
    acquisition_ensemble,
    bandwidth_sweep,
    fit_error_curve,
    fringe_ratio,
    inloop_spectra,
    loop_suppression_db,
    loss_sweep,
    nl_vs_cml,
    theta_grid,
)
from .loop import measure_stability, open_loop_error
from .presets import _with, get_preset


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    tolerance: str
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.number:2d} [{tag}] {self.title}: {self.measured} "
                f"(tolerance: {self.tolerance}; {self.seconds:.1f} s)")  # fmt: skip


def _timed(number, title, budget=None):
    """Decorator: time the protocol and fold an optional runtime budget into the verdict."""

    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            passed, measured, tol = fn()
            dt = time.perf_counter() - t0
            if budget is not None:
                passed = passed and dt < budget
                tol = f"{tol}; runtime < {budget:g} s"
            return CriterionResult(number, title, bool(passed), measured, tol, dt)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        run.number = number
        return run

    return wrap


# ------------------------------------------------------------------ 1


@_timed(1, "kurtosis identity", budget=5.0)
def criterion_1():
    """sqrt(m4 - m2^2) of Gaussian samples equals sqrt(2) V."""
    worst = 0.0
    for i, v in enumerate((0.25, 1.0, 4.0)):
        x = math.sqrt(v) * rng.standard_normal(1000 + i, 1_000_000)
        d = x - x.mean()
        m2, m4 = np.mean(d**2), np.mean(d**4)
        worst = max(worst, abs(math.sqrt(m4 - m2 * m2) / (math.sqrt(2) * v) - 1))
    return worst < 0.01, f"max relative error {worst:.4f} over V in (0.25, 1, 4)", "< 0.01"


# ------------------------------------------------------------------ 2, 3, 4


def _sweep(cfg):
    synth = cfg.synthesis()
    theta = theta_grid(synth, cfg.run.n_points)
    curve = open_loop_error(synth, cfg.chain(), theta, duration=cfg.duration, settle=cfg.settle)
    return fit_error_curve(synth, theta, curve.epsilon)


@_timed(2, "homodyne error-signal shape", budget=60.0)
def criterion_2():
    """24 phases, 10 s scaled each, R = 0.41: single-gain sin(2 theta0) fit."""
    cfg = _with(get_preset("squeezed"), run={"n_points": 24, "duration": 0.1})
    fit = _sweep(cfg)
    ok = fit["rms_residual"] < 0.05 and fit["crossing_error"] <= 0.02
    return ok, (f"residual {fit['rms_residual']:.4f} of A, crossings off by "
                f"{fit['crossing_error']:.4f} rad"), "residual < 0.05 A; crossings within 0.02 rad"  # fmt: skip


def coherent_sweep_config():
    """Coherent fringe sweep: the fig6 electronics with a deeper dither.

    The DC scale is 1 (mean photocurrent equal to the shot-noise scale). At a
    realistic DC scale the coherent dither harmonics leak through the
    bandpass skirts and distort the curve by a term in sin(2 theta0).
    """
    return _with(
        get_preset("fig6"),
        experiment={"kind": ExperimentKind.SWEEP_THETA},
        plant={"dc_scale": 1.0},
        modulation={"theta1": 0.2},
        run={"n_points": 24, "n_seeds": 1, "duration": 0.1, "settle": 2e-3},
    )


@_timed(3, "coherent error-signal shape")
def criterion_3():
    """24 phases, 10 s scaled each, visibility 0.6: single-gain cos(theta0) fit."""
    fit = _sweep(coherent_sweep_config())
    ok = fit["rms_residual"] < 0.05 and fit["crossing_error"] <= 0.02
    return ok, (f"residual {fit['rms_residual']:.4f} of A, crossings off by "
                f"{fit['crossing_error']:.4f} rad"), "residual < 0.05 A; crossings within 0.02 rad"  # fmt: skip


@_timed(4, "null error signal without squeezing")
def criterion_4():
    """R = 0: every phase reads zero within three standard errors."""
    cfg = _with(get_preset("squeezed"), plant={"squeeze_factor": 0.0}, run={"n_points": 12, "duration": 0.03})
    synth = cfg.synthesis()
    chain = cfg.chain()
    z = []
    # one seed per phase: without squeezing the phases would otherwise share one noise record
    for i, th in enumerate(theta_grid(synth, cfg.run.n_points)):
        c = open_loop_error(synth.replace(seed=synth.seed + i), chain, th, duration=cfg.duration,
                            settle=cfg.settle, n_blocks=30)  # fmt: skip
        z.append(abs(c.epsilon[0]) / c.stderr[0])
    z = np.array(z)
    return bool(np.all(z < 3)), f"max |mean|/stderr {z.max():.2f} over 12 phases", "< 3 at every phase"


# ------------------------------------------------------------------ 5, 6, 7


def _stability_cfg():
    return get_preset("stability_loss")


@_timed(5, "quadrature stability ratio", budget=180.0)
def criterion_5():
    """Squeezed over anti-squeezed Monte Carlo stability at R = 0.41, no loss, 20 seeds."""
    cfg = _stability_cfg()
    synth = cfg.synthesis(squeezed=cfg.squeezed_spec(loss_lambda=0.0))
    chain = cfg.chain()
    kw = dict(seeds=range(cfg.experiment.seed, cfg.experiment.seed + 20), duration=cfg.duration,
              settle=cfg.settle, lock_threshold=cfg.tolerances.lock_threshold)  # fmt: skip
    sq = measure_stability(synth, chain, LockPoint.SQUEEZED, **kw)
    an = measure_stability(synth, chain, LockPoint.ANTI_SQUEEZED, **kw)
    target = math.exp(-2 * cfg.plant.squeeze_factor)
    ratio = sq.delta_theta / an.delta_theta
    ok = abs(ratio / target - 1) <= 0.2 and sq.n_used >= 20 and an.n_used >= 20
    return ok, (f"ratio {ratio:.4f} vs {target:.4f} "
                f"(seeds used {sq.n_used}/{an.n_used})"), "within 20% of exp(-2R), >= 20 seeds"  # fmt: skip


@_timed(6, "bandwidth scaling")
def criterion_6():
    """Log-log slope of stability over a 16x range of detection bandwidth."""
    cfg = get_preset("stability_bandwidth")
    cols, slope = bandwidth_sweep(cfg)
    n = cols["bandwidth_product"]
    slope_ind = float(np.polyfit(np.log(n), np.log(cols["dtheta_mc"]), 1)[0])
    return (abs(slope + 0.25) <= 0.05, f"slope {slope:.4f} vs nominal bandwidth "
            f"({slope_ind:.4f} vs independent-sample count)", "-0.25 +- 0.05")  # fmt: skip


@_timed(7, "loss monotonicity")
def criterion_7():
    """Stability grows with loss for both lock points: analytically and by matched-seed Monte Carlo."""
    cfg = _stability_cfg()
    lams = (0.0, 0.1, 0.5)
    rs = np.linspace(0.05, 2.0, 40)
    analytic_ok = True
    for r in rs:
        pairs = np.array([stability_homodyne_scaled(float(r), lam, 1.0) for lam in lams])
        analytic_ok &= bool(np.all(np.diff(pairs, axis=0) > 0))
    cols = loss_sweep(_with(cfg, run={"loss_values": lams}))
    mc_ok = all(bool(np.all(np.diff(cols[f"{k}_mc"]) > 0)) for k in ("squeezed", "anti"))
    meas = (f"analytic ordered for all R: {analytic_ok}; MC squeezed "
            f"{np.round(cols['squeezed_mc'], 4).tolist()}, anti {np.round(cols['anti_mc'], 4).tolist()}")  # fmt: skip
    return analytic_ok and mc_ok, meas, "strictly increasing in lambda (0, 0.1, 0.5)"


# ------------------------------------------------------------------ 8, 9, 10, 11


@_timed(8, "bright/dark fringe noise ratio")
def criterion_8():
    """Visibility 0.6: bright-fringe over dark-fringe NL stability as a power ratio."""
    fr = fringe_ratio(get_preset("fringe"))
    return (abs(fr["ratio_db"] - 6.0) <= 1.5, f"{fr['ratio_db']:.2f} dB "
            f"(analytic {fr['analytic_ratio_db']:.2f} dB)", "6 +- 1.5 dB")  # fmt: skip


@_timed(9, "lock acquisition")
def criterion_9():
    """50 random starts under a random walk; flipping the demodulation phase picks the other quadrature."""
    ens = acquisition_ensemble(get_preset("acquire"), n_runs=50)
    ok = ens["acquired_fraction"] >= 0.95 and ens["flipped_alternate_fraction"] == 1.0
    return ok, (f"acquired {ens['acquired_fraction']:.2f}; flipped runs on the alternate point "
                f"{ens['flipped_alternate_fraction']:.2f} of {ens['flipped_converged']} converged"), \
        "acquired >= 0.95 within 0.5 s scaled-equivalent; alternate == 1.0"  # fmt: skip


@_timed(10, "NL versus CML noise")
def criterion_10():
    """Matched coherent plant: phase-equivalent NL noise over CML noise."""
    res = nl_vs_cml(get_preset("fig6"))
    return res["ratio_db"] >= 20.0, f"NL exceeds CML by {res['ratio_db']:.1f} dB", ">= 20 dB"


@_timed(11, "in-loop spectra")
def criterion_11():
    """Anti-squeezed lock PSD above squeezed lock PSD below the UGF, with loop suppression at low frequency."""
    cfg = get_preset("fig8")
    spectra, reports = inloop_spectra(cfg)
    f, p_sq = spectra[LockPoint.SQUEEZED]
    _, p_an = spectra[LockPoint.ANTI_SQUEEZED]
    ugf = cfg.hz(cfg.servo.ugf_hz)
    low = (f > 0) & (f < ugf)
    margin = float(np.min(10 * np.log10(p_an[low] / p_sq[low])))
    sup = [loop_suppression_db(f, p, ugf) for p in (p_sq, p_an)]
    locked = all(r.acquired for r in reports.values())
    ok = margin > 0 and min(sup) >= cfg.tolerances.loop_suppression_db and locked
    return ok, (f"min anti-squeezed excess {margin:.1f} dB; suppression {sup[0]:.1f}/{sup[1]:.1f} dB; "
                f"locked {locked}"), f"> 0 dB below UGF; suppression >= {cfg.tolerances.loop_suppression_db} dB"  # fmt: skip


# ------------------------------------------------------------------ 12


@_timed(12, "DSP contracts", budget=10.0)
def criterion_12():
    """Filter responses, envelope calibration, lock-in quadrature rejection and Welch flatness."""
    fs = 1e6
    t = np.arange(200_000) / fs
    checks = {}
    bpf = BandpassFilter(fs, 10e3, 300e3).fit()
    fc = bpf.center_frequency
    y = bpf.transform(np.sin(2 * np.pi * fc * t))
    checks["bpf_center_db"] = 20 * np.log10(np.sqrt(2) * np.std(y[len(y) // 2 :]))
    bpf.fit()
    y = bpf.transform(np.sin(2 * np.pi * 1e3 * t))
    checks["bpf_low_db"] = 20 * np.log10(np.sqrt(2) * np.std(y[len(y) // 2 :]))
    env = EnvelopeDetector(fs, cutoff=1e3, law="linear").fit()
    a = 0.7
    checks["envelope_rel"] = np.mean(env.transform(a * np.sin(2 * np.pi * 50e3 * t))[len(t) // 2 :]) / a - 1
    f_ref, m = 2e3, 0.3
    lia = LockInAmplifier(fs, ref_freq=f_ref, time_constant=5e-3, slope=12).fit()
    checks["lockin_inphase_rel"] = np.mean(lia.transform(m * np.sin(2 * np.pi * f_ref * t))[len(t) // 2 :]) / m - 1
    lia.fit()
    checks["lockin_quad_rel"] = np.mean(lia.transform(m * np.cos(2 * np.pi * f_ref * t))[len(t) // 2 :]) / m
    f, p = welch_psd(rng.standard_normal(12, 1_000_000), fs, segment=1024)
    mid = (f > 0.1 * fs / 2) & (f < 0.9 * fs / 2)
    checks["welch_dev_db"] = np.max(np.abs(10 * np.log10(p[mid] / (2 / fs))))
    ok = (abs(checks["bpf_center_db"]) <= 1 and checks["bpf_low_db"] <= -55 and abs(checks["envelope_rel"]) <= 0.02
          and abs(checks["lockin_inphase_rel"]) <= 0.01 and abs(checks["lockin_quad_rel"]) <= 0.01
          and checks["welch_dev_db"] <= 0.5)  # fmt: skip
    meas = ", ".join(f"{k} {v:.4g}" for k, v in checks.items())
    tol = "center |.|<=1 dB, f_low/10 <= -55 dB, envelope 2%, lock-in 1%, Welch 0.5 dB"
    return ok, meas, tol


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8,
            criterion_9, criterion_10, criterion_11, criterion_12]  # fmt: skip


def run_all(numbers=None, echo=print):
    """Run the selected criteria (all by default), echoing one line each."""
    results = []
    for fn in CRITERIA:
        if numbers and fn.number not in numbers:
            continue
        try:
            res = fn()
        except Exception as exc:  # report, do not abort the suite
            res = CriterionResult(fn.number, fn.__name__, False, f"error: {exc!r}", "runs without error")
        results.append(res)
        if echo:
            echo(res.line())
    return results
