"""Mass-spring-damper chains, their state-space forms and simulation.

The second-order plant ``M q'' + D q' + K q = B u`` is written in the
coordinates ``x = (q, q')`` and measured through displacement, velocity
and acceleration sensitivities. Plants can be augmented with autonomous
signal models, discretized and simulated with seeded measurement noise.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .signals import MimoSignalModel, PeriodicSignalModel, stack_mimo


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of an ``n``-mass chain anchored at both ends.

    ``stiffnesses`` holds ``k_1 .. k_{n+1}``; when ``include_last_anchor`` is
    False a length-``n`` sequence is also accepted and ``k_{n+1}`` is zero.
    Damping is either explicit (``dampings``) or Rayleigh (``rayleigh =
    (eps, nu)`` giving ``D = eps M + nu K``). ``input_influence`` is the
    ``n x r`` force distribution; by default a single force on mass 1.
    """

    masses: tuple
    stiffnesses: tuple
    dampings: tuple | None = None
    rayleigh: tuple | None = None
    include_last_anchor: bool = True
    input_influence: np.ndarray | None = None

    @property
    def n(self):
        return len(self.masses)


@dataclass(frozen=True)
class MechanicalSystem:
    M: np.ndarray
    D: np.ndarray
    K: np.ndarray
    B_influence: np.ndarray

    @property
    def n(self):
        return self.M.shape[0]

    @property
    def r(self):
        return self.B_influence.shape[1]

    @property
    def K_norm(self):
        return np.linalg.solve(self.M, self.K)

    @property
    def D_norm(self):
        return np.linalg.solve(self.M, self.D)

    @property
    def B_norm(self):
        return np.linalg.solve(self.M, self.B_influence)

    def natural_frequencies(self):
        """Undamped natural frequencies (rad/s), ascending."""
        lam = np.linalg.eigvals(self.K_norm)
        return np.sort(np.sqrt(np.abs(lam.real)))


@dataclass(frozen=True)
class SensorConfig:
    C_p: np.ndarray
    C_v: np.ndarray
    C_ac: np.ndarray
    noise_snr_db: float | None = None

    @classmethod
    def acceleration(cls, n, snr_db=None):
        """Acceleration sensors on every mass (``C_ac = I``)."""
        return cls(np.zeros((n, n)), np.zeros((n, n)), np.eye(n), snr_db)

    @property
    def m(self):
        return self.C_ac.shape[0]

    def with_snr(self, snr_db):
        return SensorConfig(self.C_p, self.C_v, self.C_ac, snr_db)


@dataclass(frozen=True)
class PlantStateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    domain: str = "continuous"
    T_s: float | None = None

    @property
    def order(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class AugmentedModel:
    A_a: np.ndarray
    C_a: np.ndarray
    plant_dim: int
    signal_dim: int
    domain: str = "continuous"
    T_s: float | None = None
    K_a: np.ndarray | None = None
    V_a: np.ndarray | None = None


@dataclass
class SimRecord:
    """Simulated dataset; arrays are channel-major ``(channels, N)``."""

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    f_e: np.ndarray
    x: np.ndarray
    y_clean: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.t.size


def _tridiagonal(vals, n):
    vals = np.asarray(vals, dtype=float)
    T = np.zeros((n, n))
    for i in range(n):
        T[i, i] = vals[i] + vals[i + 1]
        if i + 1 < n:
            T[i, i + 1] = T[i + 1, i] = -vals[i + 1]
    return T


def _anchor_values(vals, n, include_last_anchor, name):
    vals = [float(v) for v in vals]
    if len(vals) == n and not include_last_anchor:
        vals = vals + [0.0]
    if len(vals) != n + 1:
        raise ValueError(f"{name} needs {n + 1} entries (or {n} without the last anchor), got {len(vals)}")
    if not include_last_anchor:
        vals[-1] = 0.0
    return vals


def build_chain(spec):
    """Assemble ``M``, ``D``, ``K`` and the input influence of a chain."""
    n = spec.n
    masses = np.asarray(spec.masses, dtype=float)
    if n < 1:
        raise ValueError("a chain needs at least one mass")
    if np.any(masses <= 0):
        raise ValueError(f"masses must be positive, got {masses.tolist()}")
    k = _anchor_values(spec.stiffnesses, n, spec.include_last_anchor, "stiffnesses")
    if min(k) < 0:
        raise ValueError("stiffnesses must be nonnegative")
    M = np.diag(masses)
    K = _tridiagonal(k, n)
    if np.any(np.diag(K) <= 0):
        raise ValueError("every mass needs at least one positive spring")
    if (spec.dampings is None) == (spec.rayleigh is None):
        raise ValueError("give exactly one of dampings or rayleigh")
    if spec.rayleigh is not None:
        eps, nu = spec.rayleigh
        D = eps * M + nu * K
    else:
        D = _tridiagonal(_anchor_values(spec.dampings, n, spec.include_last_anchor, "dampings"), n)
    if spec.input_influence is None:
        B = np.zeros((n, 1))
        B[0, 0] = 1.0
    else:
        B = np.asarray(spec.input_influence, dtype=float).reshape(n, -1)
    return MechanicalSystem(M, D, K, B)


def to_state_space(sys, sensors):
    """Continuous plant in ``(q, q')`` coordinates with the sensor equation.

    ``A = [[0, I], [-K_n, -D_n]]``, ``B = [0; B_n]``,
    ``C = (C_p - C_ac K_n, C_v - C_ac D_n)``, ``D = C_ac B_n`` where the
    ``_n`` matrices are premultiplied by ``M^-1``.
    """
    n = sys.n
    try:
        Minv = np.linalg.inv(sys.M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is singular") from exc
    Kn, Dn, Bn = Minv @ sys.K, Minv @ sys.D, Minv @ sys.B_influence
    A = np.block([[np.zeros((n, n)), np.eye(n)], [-Kn, -Dn]])
    B = np.vstack([np.zeros((n, sys.r)), Bn])
    C = np.hstack([sensors.C_p - sensors.C_ac @ Kn, sensors.C_v - sensors.C_ac @ Dn])
    D = sensors.C_ac @ Bn
    return PlantStateSpace(A, B, C, D)


def augment(plant, sig):
    """Stack the plant with an autonomous input model driving its input.

    ``A_a = [[A_s, B_s C_u], [0, A_u]]`` and ``C_a = (C_s, D_s C_u)``.
    """
    if isinstance(sig, PeriodicSignalModel):
        sig = stack_mimo([sig])
    if not isinstance(sig, MimoSignalModel):
        raise TypeError("sig must be a signal model")
    r = plant.B.shape[1]
    if sig.C_u.shape[0] != r:
        raise ValueError(f"signal model has {sig.C_u.shape[0]} channels, plant has {r} inputs")
    if sig.domain != plant.domain:
        raise ValueError(f"domain mismatch: plant {plant.domain}, signal {sig.domain}")
    p, q = plant.order, sig.n_u
    A = np.block([[plant.A, plant.B @ sig.C_u], [np.zeros((q, p)), sig.A_u]])
    C = np.hstack([plant.C, plant.D @ sig.C_u])
    return AugmentedModel(A, C, p, q, plant.domain, plant.T_s)


def discretize(plant, T_s):
    """Zero-order-hold discretization through one augmented exponential."""
    if T_s <= 0:
        raise ValueError(f"T_s must be positive, got {T_s}")
    p, r = plant.B.shape
    Z = np.zeros((p + r, p + r))
    Z[:p, :p] = plant.A
    Z[:p, p:] = plant.B
    E = expm(Z * T_s)
    return PlantStateSpace(E[:p, :p], E[:p, p:], plant.C, plant.D, "discrete", float(T_s))


def multisine(freqs, amps, phases, offset, N, T_s):
    """``u(k) = offset + sum_i a_i sin(2 pi f_i k T_s + alpha_i)`` for ``k < N``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    amps = np.broadcast_to(np.asarray(amps, dtype=float), freqs.shape)
    phases = np.broadcast_to(np.asarray(phases, dtype=float), freqs.shape)
    if freqs.size and np.max(freqs) >= 0.5 / T_s:
        raise ValueError("multisine frequencies must lie below Nyquist")
    t = np.arange(N) * T_s
    u = np.full(N, float(offset))
    for f, a, ph in zip(freqs, amps, phases):
        u += a * np.sin(2.0 * np.pi * f * t + ph)
    return u


def add_noise(y_clean, snr_db, rng):
    """White Gaussian noise per channel at ``10 log10(var(y) / var(e))`` dB."""
    if snr_db is None:
        return y_clean.copy()
    var = np.var(y_clean, axis=1, keepdims=True)
    sd = np.sqrt(var / 10.0 ** (snr_db / 10.0))
    return y_clean + sd * rng.standard_normal(y_clean.shape)


def simulate(plant_d, u, sensors, seed=None, B_influence=None, x0=None):
    """Simulate a discrete plant under a sampled input.

    Parameters
    ----------
    plant_d : PlantStateSpace
        Discrete plant (from :func:`discretize`).
    u : (r, N) array_like
        Input samples, held constant between samples.
    sensors : SensorConfig
        Supplies the per-channel SNR (``None`` means noise-free).
    seed : int, optional
        Seed of the noise stream.
    B_influence : (n, r) array_like, optional
        Physical input influence used to record ``f_e = B u``. Without it
        the record carries an empty ``f_e``.
    x0 : array_like, optional
        Initial plant state (zero by default).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    A, B, C, D = plant_d.A, plant_d.B, plant_d.C, plant_d.D
    p = A.shape[0]
    N = u.shape[1]
    x = np.zeros((p, N))
    if x0 is not None:
        x[:, 0] = x0
    for k in range(N - 1):
        x[:, k + 1] = A @ x[:, k] + B @ u[:, k]
    y_clean = C @ x + D @ u
    rng = np.random.default_rng(seed)
    y = add_noise(y_clean, sensors.noise_snr_db, rng)
    f_e = np.empty((0, N)) if B_influence is None else np.asarray(B_influence) @ u
    t = np.arange(N) * (plant_d.T_s or 1.0)
    return SimRecord(t, u, y, f_e, x, y_clean, {"seed": seed, "method": "zoh"})


def simulate_ct(sys, sensors, u, T_s, seed=None, oversample=1):
    """Sample-and-hold simulation of a mechanical system.

    The plant is discretized at ``T_s / oversample`` and every input sample
    is held for ``oversample`` substeps.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    plant = to_state_space(sys, sensors)
    sub = discretize(plant, T_s / oversample)
    N = u.shape[1]
    x = np.zeros((plant.order, N))
    xk = np.zeros(plant.order)
    for k in range(N):
        x[:, k] = xk
        for _ in range(oversample):
            xk = sub.A @ xk + sub.B @ u[:, k]
    y_clean = plant.C @ x + plant.D @ u
    rng = np.random.default_rng(seed)
    y = add_noise(y_clean, sensors.noise_snr_db, rng)
    t = np.arange(N) * T_s
    return SimRecord(t, u, y, sys.B_influence @ u, x, y_clean,
                     {"seed": seed, "method": "zoh", "oversample": oversample})


def simulate_multisine(sys, sensors, sig, x_u0, N, T_s, seed=None, x_s0=None):
    """Exact sampling of a plant driven by a continuous autonomous input.

    The continuous augmented model (plant plus signal generator) is
    discretized without hold assumptions, so the samples equal the
    continuous response at ``t = k T_s``. This is the noise-free ground
    truth for identification from periodic excitation.

    Parameters
    ----------
    sig : PeriodicSignalModel or MimoSignalModel
        Continuous-time input model.
    x_u0 : array_like
        Initial state of the input model (see :func:`multisine_state`).
    """
    if isinstance(sig, PeriodicSignalModel):
        sig = stack_mimo([sig])
    plant = to_state_space(sys, sensors)
    aug = augment(plant, sig)
    Ad = expm(aug.A_a * T_s)
    p = plant.order
    xa = np.concatenate([np.zeros(p) if x_s0 is None else x_s0, np.asarray(x_u0, float)])
    X = np.empty((xa.size, N))
    for k in range(N):
        X[:, k] = xa
        xa = Ad @ xa
    y_clean = aug.C_a @ X
    u = sig.C_u @ X[p:]
    rng = np.random.default_rng(seed)
    y = add_noise(y_clean, sensors.noise_snr_db, rng)
    t = np.arange(N) * T_s
    return SimRecord(t, u, y, sys.B_influence @ u, X[:p], y_clean,
                     {"seed": seed, "method": "exact-autonomous", "x_u": X[p:]})


def multisine_state(offset, amps, phases, model):
    """Initial state of a continuous signal model producing a multisine.

    Harmonic ``i`` with amplitude ``a`` and phase ``alpha`` maps to the
    block state ``(a sin alpha, a cos alpha)``, since the block
    ``[[0, w], [-w, 0]]`` propagates ``(s, c)`` as ``(a sin(wt + alpha),
    a cos(wt + alpha))``.
    """
    amps = np.atleast_1d(np.asarray(amps, dtype=float))
    phases = np.broadcast_to(np.asarray(phases, dtype=float), amps.shape)
    if amps.size != len(model.harmonics):
        raise ValueError(f"{amps.size} amplitudes for {len(model.harmonics)} harmonics")
    x = [float(offset)] if model.offset else []
    for a, ph in zip(amps, phases):
        x += [a * np.sin(ph), a * np.cos(ph)]
    return np.array(x)


def mechanical_energy(sys, x):
    """Kinetic plus potential energy ``(q' M q' + q K q) / 2`` per column of ``x``."""
    n = sys.n
    q, v = x[:n], x[n:]
    return 0.5 * (np.einsum("ik,ij,jk->k", v, sys.M, v) + np.einsum("ik,ij,jk->k", q, sys.K, q))


def export_csv(path, rec):
    """Write ``t, u_1.., y_1.., fe_1..`` with 17 significant digits."""
    cols = [rec.t[None, :], rec.u, rec.y, rec.f_e]
    header = (["t"] + [f"u_{i + 1}" for i in range(rec.u.shape[0])]
              + [f"y_{i + 1}" for i in range(rec.y.shape[0])]
              + [f"fe_{i + 1}" for i in range(rec.f_e.shape[0])])
    data = np.vstack(cols).T
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
