"""End-to-end identification runs: data generation, identification, reporting.

Known-input runs (``run_pssid``) and output-only runs (``run_blind``)
share the same chain of stages: subspace realization, conversion to
continuous time, block separation, the two linear solves for the physical
coordinates and the input map, and Kalman state reconstruction. Every stage
failure is re-raised as :class:`StageError` naming the stage.
"""
import logging
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import block_diag, solve_discrete_are
from scipy.signal import butter, sosfiltfilt

from . import __version__
from . import recovery as rc
from . import ssi
from .mechanics import (PlantStateSpace, SensorConfig, build_chain, multisine_state,
                        simulate, simulate_ct, simulate_multisine, to_state_space)
from .signals import build_ct_periodic, build_finite_length, select_harmonics

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


class OrderCapWarning(UserWarning):
    """The detected signal model pushes the augmented order past the configured cap."""


@contextmanager
def _stage(name):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class Truth:
    """Simulator ground truth used only for error reporting."""

    K_norm: np.ndarray | None = None
    D_norm: np.ndarray | None = None
    B_norm: np.ndarray | None = None
    omega_n: np.ndarray | None = None
    zeta: np.ndarray | None = None
    f_e: np.ndarray | None = None  # M^-1 B u, (n, N)


@dataclass
class Dataset:
    """Sampled record; ``f_e`` is the physical force ``B u`` when recorded."""

    T_s: float
    u: np.ndarray
    y: np.ndarray
    f_e: np.ndarray | None = None
    truth: Truth | None = None
    input_freqs: tuple = ()
    offset: bool = False
    meta: dict = field(default_factory=dict)


@dataclass
class IdentificationReport:
    mode: str
    k_norm: np.ndarray | None = None
    d_norm: np.ndarray | None = None
    b_norm: np.ndarray | None = None
    modal: list = field(default_factory=list)
    fe: np.ndarray | None = None
    fe_valid: np.ndarray | None = None
    fe_summary: dict = field(default_factory=dict)
    errors: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    def to_document(self, fe_series_path=None):
        """Plain-data form with the fixed report field names."""
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return _plain({
            "mode": self.mode,
            "k_norm": arr(self.k_norm),
            "d_norm": arr(self.d_norm),
            "b_norm": arr(self.b_norm),
            "modal": self.modal,
            "fe_series_path": fe_series_path,
            "fe_summary": self.fe_summary,
            "errors": self.errors,
            "diagnostics": self.diagnostics,
            "provenance": self.provenance,
        })


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


# --------------------------------------------------------------------------
# front end

def bandpass(y, T_s, lo_hz, hi_hz, order=4):
    """Zero-phase Butterworth band-pass (low-pass when ``lo_hz == 0``).

    Returns the filtered record and a description of the design.
    """
    nyq = 0.5 / T_s
    if not (0 <= lo_hz < hi_hz < nyq):
        raise ValueError(f"band-pass needs 0 <= lo < hi < Nyquist ({nyq} Hz), got ({lo_hz}, {hi_hz})")
    if lo_hz == 0:
        sos = butter(order, hi_hz, btype="lowpass", fs=1.0 / T_s, output="sos")
    else:
        sos = butter(order, [lo_hz, hi_hz], btype="bandpass", fs=1.0 / T_s, output="sos")
    y = np.atleast_2d(np.asarray(y, float))
    design = {"type": "butterworth", "order": int(order), "lo_hz": float(lo_hz),
              "hi_hz": float(hi_hz), "zero_phase": True}
    return sosfiltfilt(sos, y, axis=1), design


# --------------------------------------------------------------------------
# data generation

def plant_truth(system, sensors, f_e_phys):
    plant = to_state_space(system, sensors)
    ev = np.linalg.eigvals(plant.A)
    ev = ev[ev.imag > 0]
    ev = ev[np.argsort(np.abs(ev))]
    wn = np.abs(ev)
    return Truth(system.K_norm, system.D_norm, system.B_norm, wn, -ev.real / wn,
                 np.linalg.solve(system.M, f_e_phys))


def _tone_input(spec, N, T_s, rng):
    freqs = np.asarray(spec.freqs, float)
    if freqs.size == 0:
        raise ValueError("input_spec.kind 'tones' needs freqs")
    amps = np.broadcast_to(np.asarray(spec.amplitudes[:freqs.size] if len(spec.amplitudes) >= freqs.size
                                      else spec.amplitudes[0], float), freqs.shape)
    freqs = freqs + spec.jitter * rng.uniform(-1.0, 1.0, freqs.size) / (N * T_s)
    phases = rng.uniform(0.0, 2.0 * np.pi, freqs.size)
    t = np.arange(N) * T_s
    u = sum(a * np.sin(2 * np.pi * f * t + p) for a, f, p in zip(amps, freqs, phases))
    if spec.offset:
        u = u + spec.offset
    return u[None, :], freqs


def _noise_input(spec, N, T_s, rng):
    lo, hi = spec.band
    pad = 4 * int(np.ceil(1.0 / (max(lo, 1e-3) * T_s)))
    w = rng.standard_normal(N + 2 * pad)
    v, _ = bandpass(w, T_s, lo, hi, spec.filter_order)
    v = v[0, pad:pad + N]
    return (spec.rms * v / v.std())[None, :]


def generate_dataset(cfg, seed=None, n=None, snr_db="keep"):
    """Simulate the configured chain under the configured excitation.

    ``n`` and ``snr_db`` override the chain size and sensor SNR (used by
    sweeps). The noise stream and any random excitation draw from ``seed``.
    """
    seed = cfg.seed if seed is None else seed
    system = build_chain(cfg.chain.to_spec(n))
    sensors = cfg.sensors.build(system.n, snr_db)
    N, T_s = cfg.sampling.N, cfg.sampling.T_s
    spec = cfg.input_spec
    rng = np.random.default_rng([seed, 1])
    if spec.kind == "multisine":
        offset = spec.offset is not None
        sig = build_ct_periodic(spec.f_T, 0, offset=offset, harmonics=spec.harmonics)
        x_u0 = multisine_state(spec.offset or 0.0, spec.amplitudes, spec.phases, sig)
        rec = simulate_multisine(system, sensors, sig, x_u0, N, T_s, seed=seed)
        freqs = tuple(h * spec.f_T for h in spec.harmonics)
    elif spec.kind == "tones":
        u, f = _tone_input(spec, N, T_s, rng)
        rec = simulate_ct(system, sensors, u, T_s, seed=seed)
        freqs, offset = tuple(f), bool(spec.offset)
    elif spec.kind == "noise":
        rec = simulate_ct(system, sensors, _noise_input(spec, N, T_s, rng), T_s, seed=seed)
        freqs, offset = (), False
    else:
        raise ValueError(f"cannot generate data for input_spec.kind {spec.kind!r}")
    truth = plant_truth(system, sensors, rec.f_e)
    return Dataset(T_s, rec.u, rec.y, rec.f_e, truth, freqs, offset,
                   {"seed": seed, "n": system.n, "snr_db": sensors.noise_snr_db,
                    "input": spec.kind}), system, sensors


# --------------------------------------------------------------------------
# shared identification chain

@dataclass
class ChainResult:
    realization: object
    separated: object
    modes: list
    T_s_hat: np.ndarray
    X_hat: np.ndarray
    physical: object
    kalman: object
    states: object
    fe: np.ndarray
    valid: np.ndarray
    diagnostics: dict


def _riccati(re, policy, diag):
    if policy in ("covariance", "error"):
        return ssi.solve_riccati(re, form=policy)
    try:
        km = ssi.solve_riccati(re, form="covariance")
        diag["riccati_form"] = "covariance"
        return km
    except ssi.RiccatiError as exc:
        # marginally stable signal modes leave the covariance model without a
        # positive-real solution; the error-covariance iteration still converges
        log.info("covariance Riccati failed (%s); using error-covariance form", exc)
        diag["riccati_form"] = "error"
        diag["riccati_fallback_reason"] = str(exc)
        return ssi.solve_riccati(re, form="error")


def identify_chain(y, T_s, n, sensors, input_freqs, dc, ssi_cfg, rec_cfg,
                   tol_hz, metric, order=None):
    """Steps from raw outputs to the reconstructed effective input.

    ``y`` is the only data this function sees; the input enters only
    through the list of expected signal frequencies.
    """
    y = np.atleast_2d(np.asarray(y, float))
    m = y.shape[0]
    diag = {}
    if order is None:
        order = 2 * n + 2 * len(input_freqs) + (1 if dc else 0)
    i = ssi_cfg.i or ssi.default_block_rows(order, m)
    step = ssi_cfg.lag_step
    if ssi_cfg.weights != "unit":
        raise StageError("realize", ValueError(f"unsupported weights {ssi_cfg.weights!r}"))
    with _stage("realize"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ssi.RankDeficiencyWarning)
        re = ssi.identify(y, order, i=i, j=ssi_cfg.j, T_s=T_s, remove_mean=ssi_cfg.remove_mean,
                          rank_tol=ssi_cfg.rank_tol, noise_floor=ssi_cfg.noise_floor, step=step)
    diag["warnings"] = [str(w.message) for w in caught]
    diag.update(order=order, block_rows=i, lag_step=step,
                shift_condition=re.diagnostics.get("shift_condition"),
                past_rank=re.diagnostics.get("past_rank"))
    with _stage("to_continuous"):
        A_c, C_c = rc.to_continuous(re.A_d, re.C_d, re.T_s)
    with _stage("separate_blocks"):
        sj = rc.separate_blocks(A_c, C_c, None, input_freqs, dc=dc, tol_hz=tol_hz,
                                n_plant=2 * n, metric=metric)
    with _stage("solve_Ts"):
        T, dT = rc.solve_Ts(sj, sensors)
    with _stage("solve_X"):
        X, dX = rc.solve_X(sj, T, sensors)
    with _stage("modal_params"):
        modes = rc.modal_params(sj, T)
    with _stage("assemble_physical"):
        est = rc.assemble_physical(sj, T, X, sensors, rec_cfg.stability_enforce)
    with _stage("kalman"):
        km = _riccati(re, ssi_cfg.riccati, diag)
        st = ssi.kalman_states(km, y, d_offset=re.d_offset if ssi_cfg.remove_mean else None,
                               burn_in=rec_cfg.burn_in, step=step)
    with _stage("reconstruct_input"):
        fe, valid = rc.reconstruct_input(sj, T, X, st.x, st.burn_in)
    diag.update(
        Ts_system=dT.as_dict(), X_system=dX.as_dict(),
        structural_residual=est.structural_residual,
        riccati_residual=km.residual, riccati_iterations=km.iterations,
        burn_in=st.burn_in, matches=[list(mt) for mt in sj.matches],
        stability=est.diagnostics,
    )
    return ChainResult(re, sj, modes, T, X, est, km, st, fe, valid, diag)


def _modal_table(modes):
    rows = []
    for md in sorted(modes, key=lambda md: md.f_nat_rad_s):
        row = {"f_nat_rad_s": md.f_nat_rad_s, "f_nat_hz": md.f_nat_hz, "zeta": md.zeta}
        if md.shape is not None:
            row["shape"] = np.real(md.shape).tolist()
            row["shape_imag"] = np.imag(md.shape).tolist()
        rows.append(row)
    return rows


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b))


def _mode_errors(modes, truth):
    if truth.omega_n is None:
        return None, None
    fn = np.array(sorted(md.f_nat_rad_s for md in modes))
    order = np.argsort([md.f_nat_rad_s for md in modes])
    zeta = np.array([modes[k].zeta for k in order])
    if fn.size != truth.omega_n.size:
        return None, None
    return (np.abs(fn - truth.omega_n) / truth.omega_n,
            np.abs(zeta - truth.zeta) / truth.zeta)


def _fe_metrics(fe, truth_fe, valid):
    if truth_fe is None or truth_fe.size == 0 or not valid.any():
        return None
    d, t = fe[:, valid], truth_fe[:, valid]
    # channels without applied force have no meaningful correlation
    corr = [float(np.corrcoef(a, b)[0, 1]) if np.std(a) > 0 and np.std(b) > 0 else None
            for a, b in zip(d, t)]
    return {"nrmse": _rel(d, t), "correlation": corr}


def _fe_summary(fe, valid):
    v = fe[:, valid] if valid.any() else fe
    return {"mean": v.mean(axis=1).tolist(), "std": v.std(axis=1).tolist(),
            "min": v.min(axis=1).tolist(), "max": v.max(axis=1).tolist(),
            "n_valid": int(valid.sum())}


def _series(data, T_s, res):
    s = {"singular_values": ("index,singular_value",
                             np.c_[np.arange(res.realization.singular_values.size),
                                   res.realization.singular_values])}
    y = np.atleast_2d(data.y)
    freqs = np.fft.rfftfreq(y.shape[1], T_s)
    spec = np.abs(np.fft.rfft(y - y.mean(axis=1, keepdims=True), axis=1)) ** 2
    s["output_spectrum"] = ("f_hz," + ",".join(f"p_{k + 1}" for k in range(y.shape[0])),
                            np.c_[freqs, spec.T])
    return s


def _provenance(cfg, seed):
    return {"config_hash": cfg.hash(), "seed": int(seed), "version": __version__}


# --------------------------------------------------------------------------
# known-input identification

def run_pssid(cfg, data=None, sensors=None, seed=None):
    """Known periodic input: identify the physical model, the input and ``B``.

    Parameters
    ----------
    cfg : ExperimentConfig
    data : Dataset, optional
        External data; simulated from ``cfg`` when omitted.
    sensors : SensorConfig, optional
        Required with external data.
    """
    seed = cfg.seed if seed is None else seed
    if data is None:
        with _stage("simulate"):
            data, _, sensors = generate_dataset(cfg, seed)
    elif sensors is None:
        raise ValueError("external data needs a sensor configuration")
    n = sensors.C_ac.shape[1]
    spec = cfg.input_spec
    freqs = data.input_freqs or tuple(h * spec.f_T for h in spec.harmonics)
    offset = data.offset if data.input_freqs else spec.offset is not None
    dc = offset and rc.dc_observable(sensors)
    T_s = data.T_s
    tol = cfg.recovery.tol_hz or 2.0 / (data.y.shape[1] * T_s)
    order = None if cfg.ssi.order_hint == "auto" else int(cfg.ssi.order_hint)
    res = identify_chain(data.y, T_s, n, sensors, freqs, dc, cfg.ssi, cfg.recovery,
                         tol, cfg.recovery.metric or "frequency", order)
    fe, valid = res.fe, res.valid
    u = np.atleast_2d(data.u)
    diag = dict(res.diagnostics, dc_in_model=bool(dc), input_freqs_hz=list(freqs))
    with _stage("estimate_Bs"):
        if offset and not dc and cfg.recovery.dc_completion:
            # the constant input component is invisible to the outputs, so its
            # share of f_e is rebuilt from the fitted B and the known input mean
            u_mean = u[:, valid].mean(axis=1, keepdims=True)
            fe_c = fe - fe[:, valid].mean(axis=1, keepdims=True)
            B_s, _ = rc.estimate_Bs(fe_c[:, valid], u[:, valid] - u_mean, sensors)
            fe = fe_c + B_s @ u_mean
            diag["dc_completion"] = True
        B_s, D_s = rc.estimate_Bs(fe[:, valid], u[:, valid], sensors)
    fe_low = fe[n:]
    report = IdentificationReport(
        "pssid", res.physical.K_norm, res.physical.D_norm, B_s[n:], _modal_table(res.modes),
        fe_low, valid, _fe_summary(fe_low, valid), None, diag, _provenance(cfg, seed),
        _series(data, T_s, res),
    )
    report.diagnostics["D_s"] = D_s
    report.diagnostics["upper_fe_rms"] = float(np.sqrt(np.mean(fe[:n, valid] ** 2)))
    report.series["fe"] = _fe_series(data, fe_low, valid)
    if data.truth is not None:
        report.errors = _errors(report, res, data.truth, valid)
    return report


def _fe_series(data, fe_low, valid):
    n = fe_low.shape[0]
    t = np.arange(fe_low.shape[1]) * data.T_s
    cols = [t, valid.astype(float)] + list(fe_low)
    head = ["t", "valid"] + [f"fe_hat_{k + 1}" for k in range(n)]
    if data.truth is not None and data.truth.f_e is not None and data.truth.f_e.size:
        cols += list(data.truth.f_e)
        head += [f"fe_true_{k + 1}" for k in range(n)]
    return (",".join(head), np.column_stack(cols))


def _errors(report, res, truth, valid):
    err = {}
    if report.k_norm is not None and truth.K_norm is not None:
        err["k_norm_rel"] = _rel(report.k_norm, truth.K_norm)
        err["d_norm_rel"] = _rel(report.d_norm, truth.D_norm)
    if report.b_norm is not None and truth.B_norm is not None:
        err["b_norm_rel"] = _rel(report.b_norm, truth.B_norm)
    f_err, z_err = _mode_errors(res.modes, truth)
    if f_err is not None:
        err["freq_rel"] = f_err.tolist()
        err["zeta_rel"] = z_err.tolist()
    fm = _fe_metrics(report.fe, truth.f_e, valid)
    if fm is not None:
        err["fe_nrmse"] = fm["nrmse"]
        err["fe_correlation"] = fm["correlation"]
    return err


# --------------------------------------------------------------------------
# output-only identification

@dataclass
class BlindPlan:
    """Signal-model choice for an output-only run."""

    y_id: np.ndarray
    harmonics: list
    freqs: list
    order: int
    f0: float
    diagnostics: dict


def plan_blind(y, T_s, n, cfg):
    """Band-pass the outputs and size the finite-length signal model.

    The signal model treats the record as one period: its frequencies are
    the harmonics of ``1 / (N T_s)`` that carry a notable share of the
    (optionally band-passed) output energy.
    """
    y = np.atleast_2d(np.asarray(y, float))
    N = y.shape[1]
    diag = {}
    y_id = y
    bp = cfg.bandpass
    if bp.enabled:
        with _stage("bandpass"):
            y_id, design = bandpass(y, T_s, bp.lo_hz, bp.hi_hz, bp.order)
        diag["bandpass"] = design
    band = cfg.blind.detect_band or ((bp.lo_hz, bp.hi_hz) if bp.enabled else None)
    with _stage("detect_harmonics"):
        hs = select_harmonics(y_id, T_s, cfg.blind.harmonic_fraction, band=band,
                              max_harmonic=cfg.blind.max_harmonic)
        if not hs:
            raise ValueError("no harmonic exceeds the detection threshold")
        sig = build_finite_length(N, T_s, 0, offset=False, harmonics=hs)
    f0 = 1.0 / (N * T_s)
    order = 2 * n + sig.n_states
    if cfg.ssi.order_hint != "auto":
        order = int(cfg.ssi.order_hint)
    diag.update(harmonic_fraction=cfg.blind.harmonic_fraction, harmonics=list(hs),
                signal_states=sig.n_states, detect_band=band, augmented_order=order)
    if order > cfg.blind.order_cap:
        msg = (f"augmented order {order} exceeds the cap {cfg.blind.order_cap}; "
               "narrow the band or shorten the record")
        warnings.warn(msg, OrderCapWarning, stacklevel=3)
        diag["order_cap_exceeded"] = msg
    return BlindPlan(y_id, list(hs), [h * f0 for h in hs], order, f0, diag)


def identify_blind(y, T_s, n, sensors, cfg):
    """Output-only identification from ``y`` alone (see :func:`plan_blind`)."""
    y = np.atleast_2d(np.asarray(y, float))
    plan = plan_blind(y, T_s, n, cfg)
    y_id, freqs, order, f0, diag = plan.y_id, plan.freqs, plan.order, plan.f0, plan.diagnostics
    bp = cfg.bandpass
    tol = cfg.recovery.tol_hz or 0.5 * f0
    res = identify_chain(y_id, T_s, n, sensors, freqs, False, cfg.ssi, cfg.recovery,
                         tol, cfg.recovery.metric or "complex", order)
    if bp.enabled:
        # states are re-estimated from the unfiltered record
        with _stage("kalman"):
            st = ssi.kalman_states(res.kalman, y, burn_in=cfg.recovery.burn_in,
                                   step=cfg.ssi.lag_step)
            res.fe, res.valid = rc.reconstruct_input(res.separated, res.T_s_hat, res.X_hat,
                                                     st.x, st.burn_in)
            res.states = st
    res.diagnostics.update(diag)
    return res


def run_blind(cfg, data=None, sensors=None, seed=None):
    """Output-only run; only ``data.y`` reaches the identifier."""
    seed = cfg.seed if seed is None else seed
    if data is None:
        with _stage("simulate"):
            data, _, sensors = generate_dataset(cfg, seed)
    elif sensors is None:
        raise ValueError("external data needs a sensor configuration")
    n = sensors.C_ac.shape[1]
    res = identify_blind(data.y, data.T_s, n, sensors, cfg)
    fe_low = res.fe[n:]
    report = IdentificationReport(
        "blind", res.physical.K_norm, res.physical.D_norm, None, _modal_table(res.modes),
        fe_low, res.valid, _fe_summary(fe_low, res.valid), None, res.diagnostics,
        _provenance(cfg, seed), _series(data, data.T_s, res),
    )
    report.series["fe"] = _fe_series(data, fe_low, res.valid)
    if data.truth is not None:
        report.errors = _errors(report, res, data.truth, res.valid)
    return report


# --------------------------------------------------------------------------
# input estimation with a known plant

DEMO_PLANT = {
    "A": np.diag([0.5, 0.6]),
    "B": np.array([[1.0], [0.5]]),
    "C": np.array([[1.0, 1.0]]),
    "G": np.array([[1.0], [0.5]]),
}


def demo_signal(ds, seed):
    """Low-pass filtered white noise of length ``N`` and its segment of length ``N1``."""
    rng = np.random.default_rng([seed, 2])
    v, _ = bandpass(rng.standard_normal(ds.N), 1.0 / ds.f_s, 0.0, ds.cutoff_hz)
    v = v[0] / v[0].std()
    return v, v[ds.segment_start:ds.segment_start + ds.N1]


def estimate_segment_input(y, plant, sig, noise_cov, q_signal):
    """Kalman estimate of a periodic input from the output of a known plant.

    The plant ``x(k+1) = A x + B v + G e``, ``y = C x + e`` is augmented with
    the finite-length signal model of ``v``. Since ``v(k)`` first shows in
    ``y(k+1)``, the estimate is read from the filtered state one step later:
    ``v_hat(k) = C_v A_v^-1 x_v(k+1 | k+1)``. ``q_signal`` is a small
    process-noise level on the signal states that lets the filter follow the
    part of the input outside the retained harmonics.
    """
    A, B, C, G = plant["A"], plant["B"], plant["C"], plant["G"]
    p = A.shape[0]
    A_a = block_diag(A, sig.A_v)
    A_a[:p, p:] = B @ sig.C_v
    C_a = np.hstack([C, np.zeros((C.shape[0], sig.n_states))])
    n_a = A_a.shape[0]
    Q = np.zeros((n_a, n_a))
    Q[:p, :p] = noise_cov * G @ G.T
    Q[p:, p:] = q_signal * np.eye(sig.n_states)
    S = np.zeros((n_a, C.shape[0]))
    S[:p] = noise_cov * G
    R = np.atleast_2d(noise_cov)
    P = solve_discrete_are(A_a.T, C_a.T, Q, R, s=S)
    Re = C_a @ P @ C_a.T + R
    K = (A_a @ P @ C_a.T + S) @ np.linalg.inv(Re)
    L = P @ C_a.T @ np.linalg.inv(Re)
    read = sig.C_v @ np.linalg.inv(sig.A_v)
    y = np.atleast_2d(y)
    N = y.shape[1]
    x = np.zeros(n_a)
    v_hat = np.empty(N)
    F = A_a - K @ C_a
    for k in range(N):
        e = y[:, k] - C_a @ x
        if k > 0:
            v_hat[k - 1] = read[0] @ (x[p:] + L[p:] @ e)
        x = F @ x + K @ y[:, k]
    # no later output constrains the final sample; use its prediction
    v_hat[N - 1] = read[0] @ x[p:]
    return v_hat, K


def run_input_estimation_demo(cfg, seed=None):
    """Estimate one periodic segment of a band-limited input from the output.

    The segment of length ``N1`` is repeated over ``N`` samples, the known
    plant is simulated with measurement noise, and the input is estimated
    with the augmented-model filter. Fit metrics use the final period.
    """
    seed = cfg.seed if seed is None else seed
    ds = cfg.demo
    if ds.N % ds.N1:
        raise ValueError("demo.N must be a multiple of demo.N1")
    T_s = 1.0 / ds.f_s
    _, v1 = demo_signal(ds, seed)
    u = np.tile(v1, ds.N // ds.N1)[None, :]
    P = DEMO_PLANT
    rng = np.random.default_rng([seed, 3])
    e = np.sqrt(ds.noise_cov) * rng.standard_normal(ds.N)
    plant = PlantStateSpace(P["A"], np.hstack([P["B"], P["G"]]), P["C"],
                            np.array([[0.0, 1.0]]), "discrete", T_s)
    with _stage("simulate"):
        silent = SensorConfig(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))
        rec = simulate(plant, np.vstack([u, e]), silent)
    y = rec.y
    with _stage("detect_harmonics"):
        hs = select_harmonics(y[:, -ds.N1:], T_s, ds.harmonic_fraction)
        sig = build_finite_length(ds.N1, T_s, 0, offset=True, harmonics=hs)
    with _stage("estimate_input"):
        v_hat, K = estimate_segment_input(y, P, sig, ds.noise_cov, ds.signal_process_noise)
    periods = ds.N // ds.N1
    per = [_rel(v_hat[k * ds.N1:(k + 1) * ds.N1], u[0, k * ds.N1:(k + 1) * ds.N1])
           for k in range(periods)]
    last = slice(ds.N - ds.N1, ds.N)
    V_true = np.fft.rfft(u[0, last])
    V_hat = np.fft.rfft(v_hat[last])
    band = np.arange(1, max(hs) + 1) if hs else np.arange(1, 2)
    spectral = float(np.linalg.norm(np.abs(V_hat[band]) - np.abs(V_true[band]))
                     / np.linalg.norm(np.abs(V_true[band])))
    t = np.arange(ds.N) * T_s
    report = IdentificationReport(
        "input-estimation-demo",
        fe=v_hat[None, :], fe_valid=np.r_[np.zeros(ds.N - ds.N1, bool), np.ones(ds.N1, bool)],
        provenance=_provenance(cfg, seed),
    )
    report.fe_summary = _fe_summary(report.fe, report.fe_valid)
    report.errors = {"nrmse": per[-1], "nrmse_per_period": per, "spectral_rel": spectral,
                     "correlation": float(np.corrcoef(v_hat[last], u[0, last])[0, 1])}
    report.diagnostics = {"harmonics": len(hs), "max_harmonic": max(hs) if hs else 0,
                          "signal_states": sig.n_states, "noise_cov": ds.noise_cov,
                          "N": ds.N, "N1": ds.N1, "f_s": ds.f_s,
                          "gain_norm": float(np.linalg.norm(K))}
    report.series["fe"] = ("t,v_true,v_hat", np.c_[t, u[0], v_hat])
    freqs = np.fft.rfftfreq(ds.N1, T_s)
    report.series["spectrum"] = ("f_hz,abs_true,abs_hat", np.c_[freqs, np.abs(V_true), np.abs(V_hat)])
    return report


# --------------------------------------------------------------------------
# sweeps

def _sweep_point(args):
    cfg, n, snr, seed = args
    row = {"n": n, "snr_db": snr, "seed": seed}
    try:
        rep = run_pssid(cfg, seed=seed) if n is None else _run_n(cfg, n, snr, seed)
    except StageError as exc:
        row.update(ok=False, stage=exc.stage, error=str(exc))
        return row
    d = rep.diagnostics
    row.update(
        ok=True,
        Ts_rank=d["Ts_system"]["rank"], Ts_unknowns=d["Ts_system"]["n_unknowns"],
        X_rank=d["X_system"]["rank"], X_unknowns=d["X_system"]["n_unknowns"],
        **{k: rep.errors[k] for k in ("k_norm_rel", "d_norm_rel", "fe_nrmse") if k in rep.errors},
        freq_rel_max=max(rep.errors["freq_rel"]), zeta_rel_max=max(rep.errors["zeta_rel"]),
    )
    return row


def _run_n(cfg, n, snr, seed):
    data, _, sensors = generate_dataset(cfg, seed, n=n, snr_db=snr)
    return run_pssid(cfg, data, sensors, seed)


def run_sweep(cfg, workers=1):
    """Known-input runs over ``dof_list`` x ``snr_list`` x seeds.

    Points run in a fixed order (optionally on worker processes) and are
    aggregated per ``(n, snr)`` as medians over successful seeds.
    """
    mc = cfg.monte_carlo
    dofs = list(mc.dof_list) or [cfg.chain.n]
    snrs = list(mc.snr_list) or [cfg.sensors.snr_db]
    seeds = mc.seed_list(cfg.seed)
    points = [(cfg, int(n), None if s is None else float(s), sd)
              for n in dofs for s in snrs for sd in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_sweep_point, points))
    else:
        rows = [_sweep_point(p) for p in points]
    summary = []
    for n in dofs:
        for s in snrs:
            sel = [r for r in rows if r["n"] == n and r["snr_db"] == s]
            ok = [r for r in sel if r["ok"]]
            entry = {"n": n, "snr_db": s, "runs": len(sel), "failures": len(sel) - len(ok)}
            for key in ("k_norm_rel", "d_norm_rel", "freq_rel_max", "zeta_rel_max", "fe_nrmse"):
                vals = [r[key] for r in ok if key in r]
                if vals:
                    entry[f"median_{key}"] = float(np.median(vals))
            entry["full_rank"] = all(r["Ts_rank"] == r["Ts_unknowns"] and r["X_rank"] == r["X_unknowns"]
                                     for r in ok) and len(ok) == len(sel)
            summary.append(entry)
    report = IdentificationReport("sweep", provenance=_provenance(cfg, cfg.seed))
    report.diagnostics = {"points": rows, "summary": summary,
                          "thresholds_note": "sweep thresholds are set by this package"}
    return report


def with_seed(cfg, seed):
    return replace(cfg, seed=int(seed))
