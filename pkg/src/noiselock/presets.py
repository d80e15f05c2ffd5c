"""Named experiment presets.

All values are in the full-rate frame; the default ``scale_factor`` of 0.01
brings the megahertz electronics down to a 1 MHz simulation rate.
"""

import dataclasses
import math

from .analytic import LockPoint, squeeze_and_loss_from_db
from .config import ExperimentConfig, ExperimentKind, emit_config
from .dsp import EnvelopeLaw
from .loop import ErrorSource
from .plant import DisturbanceKind, Port, Quadrature
from .timeseries import Mode

PLANCK = 6.62607015e-34
LIGHT_SPEED = 299792458.0


def photon_rate(power_w, wavelength_m):
    return power_w * wavelength_m / (PLANCK * LIGHT_SPEED)


def dc_scale_for(power_w, wavelength_m=1064e-9):
    """Mean-to-shot-noise scale of a detected beam: sqrt(photon rate / 2)."""
    return math.sqrt(photon_rate(power_w, wavelength_m) / 2)


def _with(cfg, **sections):
    """Copy ``cfg`` replacing fields section by section: ``plant={'mode': ...}``."""
    changes = {name: dataclasses.replace(getattr(cfg, name), **fields) for name, fields in sections.items()}
    return dataclasses.replace(cfg, **changes)


def squeezed():
    """Squeezed vacuum R = 0.41 on the homodyne readout, error-signal sweep."""
    return _with(ExperimentConfig(), run={"n_seeds": 1, "duration": 0.1, "settle": 2e-3})


def fig2():
    """11 dB of phase squeezing: noise variance and error signal versus phase."""
    r = 1.1 * math.log(10) / 2
    return _with(
        ExperimentConfig(),
        plant={"squeeze_factor": r, "squeezed_quadrature": Quadrature.PHASE},
        run={"n_seeds": 1, "duration": 0.03, "settle": 2e-3},
        tolerances={"zero_crossing": 0.01},
    )


def fig3():
    """Analytic stability of both lock points versus squeeze factor at three losses."""
    rs = tuple(round(0.05 * k, 2) for k in range(1, 41))
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.STABILITY_VS_R},
        run={"n_seeds": 0, "squeeze_factors": rs, "loss_values": (0.0, 0.1, 0.5)},
    )


def _coherent(cfg):
    return _with(
        cfg,
        plant={"mode": Mode.COHERENT, "visibility": 0.6, "dc_scale": dc_scale_for(2e-3), "port": Port.D},
        modulation={"freq_hz": 100e3, "theta1": 0.045, "theta0": 0.8},
        bandpass={"f_low": 2e6, "f_high": 20e6},
        envelope={"cutoff": 200e3},
        lockin={"time_constant": 10e-3, "slope": 6},
        servo={"lock_point": LockPoint.DARK_FRINGE, "ugf_hz": 4.0},
    )


def fig4():
    """Coherent fringe, visibility 0.6: loop closed 0.4 s into the trace."""
    return _with(
        _coherent(ExperimentConfig()),
        experiment={"kind": ExperimentKind.LOCK_ACQUIRE},
        servo={"engage_time": 0.4, "ugf_hz": 10.0},
        disturbance={"kind": DisturbanceKind.RANDOM_WALK, "diffusion": 0.01},
        run={"duration": 1.0, "record_every": 1000},
    )


def fig6():
    """Phase-equivalent noise of the NL and CML error signals on one coherent plant."""
    return _with(
        _coherent(ExperimentConfig()),
        experiment={"kind": ExperimentKind.COHERENT_VS_CML},
        lockin={"time_constant": 1e-3},
        servo={"error_source": ErrorSource.CML},
        run={"duration": 0.2, "settle": 0.01, "record_every": 100, "segment_time": 0.02, "n_seeds": 0},
    )


def fringe():
    """Bright versus dark fringe NL stability on the visibility 0.6 plant."""
    return _with(
        fig6(),
        modulation={"theta1": 0.2},
        run={"n_seeds": 20, "duration": 0.05, "settle": 1e-3, "averaging_time": 2e-4, "segment_time": 0.01},
    )


def fig8():
    """In-loop error spectra locked to each quadrature (-1 dB / +5 dB squeezer)."""
    r, lam = squeeze_and_loss_from_db(-1.0, 5.0)
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.SPECTRUM_INLOOP},
        plant={"squeeze_factor": r, "loss_lambda": lam},
        run={"duration": 0.2, "settle": 0.02, "record_every": 100, "segment_time": 0.04},
    )


def acquire():
    """Lock acquisition from random phases under a random-walk disturbance."""
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.LOCK_ACQUIRE},
        disturbance={"kind": DisturbanceKind.RANDOM_WALK, "diffusion": 1.0},
        run={"n_runs": 50, "duration": 0.5, "record_every": 100, "initial_phase_spread": 2 * math.pi},
    )


def stability_loss():
    """Monte Carlo stability of both lock points at three losses, matched seeds."""
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.STABILITY_VS_LOSS},
        run={"n_seeds": 20, "duration": 0.01, "settle": 1e-3, "loss_values": (0.0, 0.1, 0.5)},
    )


def stability_bandwidth():
    """Monte Carlo stability over a 16x range of detection bandwidth."""
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.STABILITY_VS_BANDWIDTH},
        run={"n_seeds": 10, "duration": 0.01, "settle": 1e-3, "bandwidths": (1.8e6, 7.2e6, 28.8e6)},
    )


def stability_r():
    """Analytic curves plus Monte Carlo points for stability versus squeeze factor."""
    return _with(
        ExperimentConfig(),
        experiment={"kind": ExperimentKind.STABILITY_VS_R},
        run={"n_seeds": 10, "duration": 0.01, "settle": 1e-3, "squeeze_factors": (0.2, 0.41, 0.8),
             "loss_values": (0.0,)},
    )  # fmt: skip


def sa_envelope():
    """Spectrum analyser as the envelope detector: 2 MHz centre, 300 kHz RBW, 30 kHz VBW."""
    return _with(
        ExperimentConfig(),
        modulation={"freq_hz": 20e3},
        bandpass={"f_low": 1.85e6, "f_high": 2.15e6, "low_rollup_order": 2, "high_order": 2},
        envelope={"cutoff": 30e3, "law": EnvelopeLaw.SQUARE},
        run={"n_seeds": 1, "duration": 0.05, "settle": 2e-3},
    )


PRESETS = {
    "squeezed": squeezed,
    "fig2": fig2,
    "fig3": fig3,
    "fig4": fig4,
    "fig6": fig6,
    "fringe": fringe,
    "fig8": fig8,
    "acquire": acquire,
    "stability_loss": stability_loss,
    "stability_bandwidth": stability_bandwidth,
    "stability_r": stability_r,
    "sa_envelope": sa_envelope,
}


def get_preset(name):
    try:
        return PRESETS[name]().validate()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def preset_text(name):
    return emit_config(get_preset(name))
