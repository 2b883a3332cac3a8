"""Autonomous state-space models of band-limited periodic signals.

A signal made of an offset plus ``n_a - 1`` harmonics of a fundamental
``f_T`` is the free response of a block-diagonal linear system whose
blocks are undamped oscillators. Continuous-time, discrete-time and
finite-record (one record treated as one period) variants are provided,
together with MIMO stacking and least-squares initial-state fitting.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag


@dataclass(frozen=True)
class PeriodicSignalModel:
    """Autonomous model ``x' = A_u x`` (or ``x(k+1) = A_u x(k)``), ``u = C_u x``.

    Attributes
    ----------
    domain : {"continuous", "discrete"}
    f_T : float
        Fundamental frequency in Hz.
    n_a : int
        Harmonic-count parameter; the model carries an offset state plus
        ``n_a - 1`` oscillator blocks unless ``offset`` is False.
    T_s : float or None
        Sampling time (discrete models only).
    A_u, C_u : ndarray
    harmonics : tuple of int
        Harmonic indices carried by the oscillator blocks, in block order.
    offset : bool
        Whether the leading scalar offset state is present.
    residual_note : str
        Reminder that the unmodeled part of the signal is not represented.
    """

    domain: str
    f_T: float
    n_a: int
    T_s: float | None
    A_u: np.ndarray
    C_u: np.ndarray
    harmonics: tuple = ()
    offset: bool = True
    residual_note: str = "unmodeled residual e_o is not represented"

    @property
    def n_states(self):
        return self.A_u.shape[0]

    def frequencies_hz(self):
        """Frequencies (Hz) of the oscillator blocks, in block order."""
        return [h * self.f_T for h in self.harmonics]


@dataclass(frozen=True)
class MimoSignalModel:
    channels: tuple
    A_u: np.ndarray
    C_u: np.ndarray

    @property
    def n_u(self):
        return self.A_u.shape[0]

    @property
    def domain(self):
        return self.channels[0].domain

    @property
    def T_s(self):
        return self.channels[0].T_s


@dataclass(frozen=True)
class FiniteLengthModel:
    """One record of ``N`` samples modeled as one period of a periodic signal."""

    N: int
    T_s: float
    n_a: int
    A_v: np.ndarray
    C_v: np.ndarray
    harmonics: tuple = ()
    offset: bool = True
    fourier_coeffs: dict | None = field(default=None)

    @property
    def f_T(self):
        return 1.0 / (self.N * self.T_s)

    @property
    def n_states(self):
        return self.A_v.shape[0]

    def as_periodic(self):
        """View as a discrete :class:`PeriodicSignalModel` (same matrices)."""
        return PeriodicSignalModel(
            "discrete", self.f_T, self.n_a, self.T_s, self.A_v, self.C_v,
            self.harmonics, self.offset,
        )


def _harmonic_list(n_a, harmonics):
    if harmonics is None:
        if n_a < 1:
            raise ValueError(f"n_a must be >= 1, got {n_a}")
        return tuple(range(1, n_a))
    harmonics = tuple(int(h) for h in harmonics)
    if any(h < 1 for h in harmonics) or len(set(harmonics)) != len(harmonics):
        raise ValueError("harmonic indices must be distinct positive integers")
    return harmonics


def _assemble(scalar, blocks, offset):
    mats = ([np.array([[scalar]])] if offset else []) + list(blocks)
    if not mats:
        raise ValueError("signal model has no states")
    A = block_diag(*mats)
    C = np.zeros((1, A.shape[0]))
    pos = 0
    if offset:
        C[0, 0] = 1.0
        pos = 1
    for _ in blocks:
        C[0, pos] = 1.0
        pos += 2
    return A, C


def build_ct_periodic(f_T, n_a, offset=True, harmonics=None):
    """Continuous-time periodic signal model.

    Oscillator block ``i`` is ``[[0, i 2 pi f_T], [-i 2 pi f_T, 0]]`` with
    output row ``(1, 0)``; the offset state has dynamics 0.

    Parameters
    ----------
    f_T : float
        Fundamental frequency in Hz.
    n_a : int
        Offset plus ``n_a - 1`` harmonics. Ignored when ``harmonics`` is given.
    offset : bool, default True
        Include the constant offset state.
    harmonics : sequence of int, optional
        Explicit harmonic indices (a sparse harmonic set).
    """
    if f_T <= 0:
        raise ValueError(f"f_T must be positive, got {f_T}")
    hs = _harmonic_list(n_a, harmonics)
    blocks = []
    for h in hs:
        w = h * 2.0 * np.pi * f_T
        blocks.append(np.array([[0.0, w], [-w, 0.0]]))
    A, C = _assemble(0.0, blocks, offset)
    return PeriodicSignalModel("continuous", float(f_T), len(hs) + 1, None, A, C, hs, offset)


def build_dt_periodic(f_T, n_a, T_s, offset=True, harmonics=None):
    """Discrete-time periodic signal model.

    Oscillator block ``i`` is ``[[0, -1], [1, 2 cos(i 2 pi f_T T_s)]]``
    (a two-term recursion) and the offset state has dynamics 1. Harmonics
    must lie strictly below the Nyquist frequency.
    """
    if f_T <= 0:
        raise ValueError(f"f_T must be positive, got {f_T}")
    if T_s <= 0:
        raise ValueError(f"T_s must be positive, got {T_s}")
    hs = _harmonic_list(n_a, harmonics)
    if hs and max(hs) * f_T >= 0.5 / T_s:
        raise ValueError(
            f"harmonic {max(hs)} of f_T={f_T} Hz reaches Nyquist {0.5 / T_s} Hz; "
            "aliased blocks are ambiguous"
        )
    blocks = []
    for h in hs:
        c = np.cos(h * 2.0 * np.pi * f_T * T_s)
        blocks.append(np.array([[0.0, -1.0], [1.0, 2.0 * c]]))
    A, C = _assemble(1.0, blocks, offset)
    return PeriodicSignalModel("discrete", float(f_T), len(hs) + 1, float(T_s), A, C, hs, offset)


def fourier_coefficients(v, n_a=None, harmonics=None):
    """Real Fourier coefficients of one record treated as one period.

    Returns ``{"a0", "a", "b", "harmonics"}`` with
    ``v(k) ~ a0/2 + sum_n a_n cos(2 pi n k / N) + b_n sin(2 pi n k / N)``.
    """
    v = np.asarray(v, dtype=float)
    N = v.size
    hs = _harmonic_list(n_a if n_a is not None else N // 2 + 1, harmonics)
    V = np.fft.rfft(v)
    a = np.array([2.0 * V[h].real / N for h in hs])
    b = np.array([-2.0 * V[h].imag / N for h in hs])
    if N % 2 == 0:
        # the Nyquist bin has no sine part and is counted once
        a = np.where(np.array(hs) == N // 2, a / 2.0, a)
    return {"a0": 2.0 * V[0].real / N, "a": a, "b": b, "harmonics": hs}


def build_finite_length(N, T_s, n_a, offset=True, harmonics=None, record=None):
    """Finite-record signal model with fundamental ``1 / (N T_s)``.

    Oscillator block ``i`` is the rotation ``[[cos t, sin t], [-sin t, cos t]]``
    with ``t = i 2 pi / N``. With the initial state built from the record's
    Fourier coefficients the free response reproduces the retained
    harmonics on sample indices ``0 .. N-1``.

    Parameters
    ----------
    record : array_like, optional
        When given, its Fourier coefficients are attached as
        ``fourier_coeffs`` (including the initial state ``x0``).
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if T_s <= 0:
        raise ValueError(f"T_s must be positive, got {T_s}")
    hs = _harmonic_list(n_a, harmonics)
    if hs and max(hs) > N / 2:
        raise ValueError(f"harmonic {max(hs)} exceeds N/2 = {N / 2}")
    blocks = []
    for h in hs:
        c, s = np.cos(h * 2.0 * np.pi / N), np.sin(h * 2.0 * np.pi / N)
        blocks.append(np.array([[c, s], [-s, c]]))
    A, C = _assemble(1.0, blocks, offset)
    coeffs = None
    if record is not None:
        record = np.asarray(record, dtype=float)
        if record.size != N:
            raise ValueError(f"record has {record.size} samples, expected {N}")
        coeffs = fourier_coefficients(record, harmonics=hs)
        x0 = ([coeffs["a0"] / 2.0] if offset else []) + [
            val for pair in zip(coeffs["a"], coeffs["b"]) for val in pair
        ]
        coeffs["x0"] = np.array(x0)
    return FiniteLengthModel(int(N), float(T_s), len(hs) + 1, A, C, hs, offset, coeffs)


def stack_mimo(channels):
    """Block-diagonal stack of per-channel signal models."""
    channels = tuple(channels)
    if not channels:
        raise ValueError("at least one channel is required")
    domains = {c.domain for c in channels}
    if len(domains) != 1:
        raise ValueError(f"cannot stack mixed domains {sorted(domains)}")
    if channels[0].domain == "discrete" and len({c.T_s for c in channels}) != 1:
        raise ValueError("discrete channels must share T_s")
    A = block_diag(*[c.A_u for c in channels])
    C = block_diag(*[c.C_u for c in channels])
    return MimoSignalModel(channels, A, C)


def free_response(A, C, x0, N):
    """Outputs ``C A^k x0`` for ``k = 0 .. N-1`` as an ``(m, N)`` array."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((C.shape[0], N))
    for k in range(N):
        out[:, k] = C @ x
        x = A @ x
    return out


def observability_stack(A, C, N):
    """Rows ``C A^k`` for ``k = 0 .. N-1`` stacked as ``(N m, n)``."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    rows = np.empty((N * C.shape[0], A.shape[0]))
    M = C.copy()
    m = C.shape[0]
    for k in range(N):
        rows[k * m:(k + 1) * m] = M
        M = M @ A
    return rows


def fit_initial_state(A, C, record):
    """Least-squares initial state reproducing ``record`` over its full length.

    Returns ``(x0, residual_norm)``.
    """
    record = np.atleast_2d(np.asarray(record, dtype=float))
    N = record.shape[1]
    O = observability_stack(A, C, N)
    target = record.T.reshape(-1)
    x0, *_ = np.linalg.lstsq(O, target, rcond=None)
    return x0, float(np.linalg.norm(O @ x0 - target))


def select_harmonics(y, T_s, fraction=1e-4, band=None, max_harmonic=None):
    """Harmonics of ``1 / (N T_s)`` carrying a notable share of band energy.

    A harmonic is retained when the periodogram energy at its bin, summed
    over output channels, exceeds ``fraction`` of the total energy in the
    band.

    Parameters
    ----------
    y : (m, N) array_like
    band : (lo_hz, hi_hz), optional
        Only bins inside the band are considered.
    max_harmonic : int, optional
        Upper bound on the returned harmonic index.

    Returns
    -------
    list of int
        Selected harmonic indices in ascending order.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    N = y.shape[1]
    P = np.sum(np.abs(np.fft.rfft(y - y.mean(axis=1, keepdims=True), axis=1)) ** 2, axis=0)
    freqs = np.fft.rfftfreq(N, T_s)
    idx = np.arange(1, P.size)
    if N % 2 == 0:
        idx = idx[idx < N // 2]
    if band is not None:
        lo, hi = band
        idx = idx[(freqs[idx] >= lo) & (freqs[idx] <= hi)]
    if max_harmonic is not None:
        idx = idx[idx <= max_harmonic]
    total = P[idx].sum()
    if total <= 0:
        return []
    return [int(h) for h in idx if P[h] > fraction * total]
