"""Recovery of physical-coordinate models from an identified augmented model.

The discrete augmented model is converted to continuous time, brought to
real Jordan form and split into structural and input-signal blocks. The
physical similarity transform ``T_s`` and the Roth coupling block ``X``
then follow from two linear systems assembled with the vec/Kronecker
identity, which yields ``A_s``, the normalized stiffness and damping
matrices, modal parameters and the effective input history.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linalg import kron, principal_log, real_jordan, solve_lsq, unvec, vec


class SeparationError(ValueError):
    """Jordan blocks cannot be routed to the plant and the input model."""


class RecoveryError(np.linalg.LinAlgError):
    """A recovery linear system is rank deficient or yields a singular transform."""


@dataclass(frozen=True)
class SeparatedJordan:
    J_s: np.ndarray
    J_u: np.ndarray
    Cbar_s: np.ndarray
    Cbar_u: np.ndarray
    xbar0_s: np.ndarray | None
    xbar0_u: np.ndarray | None
    T_a: np.ndarray
    T_J: np.ndarray
    structural_blocks: tuple = ()
    signal_blocks: tuple = ()
    matches: tuple = ()

    @property
    def transform(self):
        """Map from separated Jordan coordinates to identified coordinates."""
        return self.T_a @ self.T_J.T

    def to_separated(self, x):
        """Identified-basis states (columns) to separated Jordan coordinates."""
        return np.linalg.solve(self.transform, x)


@dataclass(frozen=True)
class Mode:
    f_nat_rad_s: float
    f_nat_hz: float
    zeta: float
    sigma: float
    omega: float
    shape: np.ndarray | None = None


@dataclass(frozen=True)
class SolveDiagnostics:
    rank: int
    n_unknowns: int
    condition: float
    residual: float

    @property
    def full_rank(self):
        return self.rank == self.n_unknowns

    def as_dict(self):
        return {"rank": self.rank, "n_unknowns": self.n_unknowns,
                "condition": self.condition, "residual": self.residual}


@dataclass
class PhysicalEstimate:
    A_s_hat: np.ndarray
    C_s_hat: np.ndarray
    K_norm: np.ndarray
    D_norm: np.ndarray
    T_s_hat: np.ndarray
    X_hat: np.ndarray | None
    structural_residual: float
    B_s_hat: np.ndarray | None = None
    D_s_hat: np.ndarray | None = None
    B_norm: np.ndarray | None = None
    f_e_hat: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def to_continuous(A_d, C_d, T_s, unit_tol=1e-8):
    """``A = log(A_d) / T_s``; eigenvalues within ``unit_tol`` of 1 map to 0."""
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    return principal_log(A_d, unit_tol=unit_tol) / T_s, np.array(C_d, copy=True)


def _block_distance(block, f_hz, metric):
    """Distance in Hz between a Jordan block and an expected signal frequency."""
    if f_hz == 0.0:
        if block.kind != "real":
            return np.inf
        return abs(block.sigma) / (2 * np.pi) if metric == "complex" else 0.0
    if block.kind != "complex-pair":
        return np.inf
    if metric == "frequency":
        return abs(block.omega / (2 * np.pi) - f_hz)
    if metric == "complex":
        return abs(complex(block.sigma, block.omega - 2 * np.pi * f_hz)) / (2 * np.pi)
    raise ValueError(f"unknown matching metric {metric!r}")


def separate_blocks(A_a, C_a, x0, input_freqs, dc=True, tol_hz=None, n_plant=None,
                    metric="frequency", jordan_tol=1e-6):
    """Route the real Jordan blocks of ``A_a`` to the plant or the input model.

    Parameters
    ----------
    A_a, C_a : ndarray
        Continuous identified pair.
    x0 : ndarray or None
        Initial state in the identified basis.
    input_freqs : sequence of float
        Expected input frequencies in Hz (excluding DC).
    dc : bool
        Whether an offset (zero eigenvalue) block is expected.
    tol_hz : float
        Matching tolerance in Hz.
    n_plant : int, optional
        Expected structural dimension ``2 n``; checked when given.
    metric : {"frequency", "complex"}
        ``"frequency"`` compares ``omega / 2 pi``; ``"complex"`` compares the
        eigenvalue to ``j 2 pi f`` so heavily damped plant poles are not
        mistaken for input harmonics.
    """
    if tol_hz is None or tol_hz <= 0:
        raise ValueError("tol_hz must be positive")
    dec = real_jordan(A_a, tol=jordan_tol)
    blocks = dec.blocks
    expected = ([0.0] if dc else []) + [float(f) for f in input_freqs]
    if len(expected) > len(blocks):
        raise SeparationError(
            f"{len(expected)} signal components expected but only {len(blocks)} Jordan blocks identified"
        )
    cost = np.array([[_block_distance(b, f, metric) for b in blocks] for f in expected])
    if expected:
        finite = np.where(np.isfinite(cost), cost, 1e300)
        rows, cols = linear_sum_assignment(finite)
    else:
        rows, cols = np.array([], int), np.array([], int)
    matches = []
    for r, c in zip(rows, cols):
        if cost[r, c] > tol_hz:
            raise SeparationError(
                f"no Jordan block within {tol_hz:.4g} Hz of signal component "
                f"{expected[r]:.6g} Hz (closest {cost[r].min():.4g} Hz); count mismatch"
            )
        matches.append((expected[r], int(c), float(cost[r, c])))
    chosen = {c for _, c, _ in matches}
    for f, c, _ in matches:
        for k, b in enumerate(blocks):
            if k not in chosen and _block_distance(b, f, metric) <= tol_hz:
                raise SeparationError(
                    f"ambiguous match at {f:.6g} Hz: structural block "
                    f"{b.sigma:.4g}{b.omega:+.4g}j lies within {tol_hz:.4g} Hz; "
                    "change the frequency content of the excitation"
                )
    sig_idx = sorted(chosen)
    str_idx = [k for k in range(len(blocks)) if k not in chosen]
    order = [p for k in str_idx for p in range(*blocks[k].span)]
    n_s = len(order)
    order += [p for k in sig_idx for p in range(*blocks[k].span)]
    if n_plant is not None and n_s != n_plant:
        raise SeparationError(
            f"structural part has dimension {n_s}, expected {n_plant}"
        )
    n = A_a.shape[0]
    T_J = np.zeros((n, n))
    T_J[np.arange(n), order] = 1.0  # xbar = T_J xhat_J
    Jbar = T_J @ dec.J @ T_J.T
    Cbar = np.asarray(C_a) @ dec.T @ T_J.T
    xb = None
    if x0 is not None:
        xb = T_J @ np.linalg.solve(dec.T, np.asarray(x0, float))
    return SeparatedJordan(
        Jbar[:n_s, :n_s], Jbar[n_s:, n_s:], Cbar[:, :n_s], Cbar[:, n_s:],
        None if xb is None else xb[:n_s], None if xb is None else xb[n_s:],
        dec.T, T_J, _respan([blocks[k] for k in str_idx]),
        _respan([blocks[k] for k in sig_idx]), tuple(matches),
    )


def _respan(blocks):
    """Blocks re-indexed to consecutive spans starting at 0."""
    out, pos = [], 0
    for b in blocks:
        out.append(replace(b, span=(pos, pos + b.size)))
        pos += b.size
    return tuple(out)


def modal_params(sj, T_s_hat=None):
    """Natural frequencies, damping ratios and mode shapes from ``J_s``.

    ``f_nat = sqrt(sigma^2 + omega^2)`` (rad/s) and ``zeta = |sigma| / f_nat``;
    real poles report ``omega = 0`` and ``zeta = 1``. Mode shapes need
    ``T_s_hat`` and are the displacement rows of the complex eigenvector,
    scaled to unit maximum modulus with zero phase at the largest entry.
    """
    J = sj.J_s if isinstance(sj, SeparatedJordan) else np.asarray(sj)
    blocks = sj.structural_blocks if isinstance(sj, SeparatedJordan) else None
    if blocks is None:
        blocks = real_jordan(J).blocks
    modes = []
    pos = 0
    n = J.shape[0] // 2
    for b in blocks:
        width = b.size
        shape = None
        if T_s_hat is not None:
            cols = T_s_hat[:, pos:pos + (2 if b.kind == "complex-pair" else 1)]
            v = cols[:n, 0] + (1j * cols[:n, 1] if b.kind == "complex-pair" else 0.0)
            k = int(np.argmax(np.abs(v)))
            if abs(v[k]) > 0:
                v = v / v[k]
            shape = v
        if b.kind == "complex-pair":
            fn = float(np.hypot(b.sigma, b.omega))
            zeta = abs(b.sigma) / fn if fn > 0 else 0.0
            modes.append(Mode(fn, fn / (2 * np.pi), zeta, b.sigma, b.omega, shape))
        else:
            fn = abs(b.sigma)
            modes.append(Mode(fn, fn / (2 * np.pi), 1.0, b.sigma, 0.0, shape))
        pos += width
    return modes


def _partition(M, n):
    return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:]


def build_Ts_system(J_s, Cbar_s, sensors):
    """Coefficient matrix and right side for ``vec(T11, T12, T21, T22)``.

    Rows encode ``T21 = T11 J11 + T12 J21``, ``T22 = T11 J12 + T12 J22`` and
    the output conditions
    ``C_p T11 + C_v T21 + C_ac (T21 J11 + T22 J21) = Cbar_11``,
    ``C_p T12 + C_v T22 + C_ac (T21 J12 + T22 J22) = Cbar_12``.
    """
    n = J_s.shape[0] // 2
    if J_s.shape != (2 * n, 2 * n):
        raise ValueError("J_s must be 2n x 2n")
    J11, J12, J21, J22 = _partition(J_s, n)
    Cp, Cv, Ca = sensors.C_p, sensors.C_v, sensors.C_ac
    m = Ca.shape[0]
    I = np.eye(n)
    Z = np.zeros((n * n, n * n))
    Zc = np.zeros((m * n, n * n))
    In2 = np.eye(n * n)
    rows = [
        np.hstack([-kron(J11.T, I), -kron(J21.T, I), In2, Z]),
        np.hstack([-kron(J12.T, I), -kron(J22.T, I), Z, In2]),
        np.hstack([kron(I, Cp), Zc, kron(I, Cv) + kron(J11.T, Ca), kron(J21.T, Ca)]),
        np.hstack([Zc, kron(I, Cp), kron(J12.T, Ca), kron(I, Cv) + kron(J22.T, Ca)]),
    ]
    V = np.vstack(rows)
    C11, C12 = Cbar_s[:, :n], Cbar_s[:, n:]
    w = np.concatenate([np.zeros(2 * n * n), vec(C11), vec(C12)])
    return V, w


def solve_Ts(sj, sensors, tol=1e-10):
    """Physical similarity transform ``T_s`` with ``A_s = T_s J_s T_s^-1``.

    Returns ``(T_s_hat, diagnostics)``; a rank-deficient system is reported
    in the diagnostics, a singular ``T_s_hat`` raises :class:`RecoveryError`.
    """
    J_s = sj.J_s if isinstance(sj, SeparatedJordan) else sj[0]
    Cbar_s = sj.Cbar_s if isinstance(sj, SeparatedJordan) else sj[1]
    n = J_s.shape[0] // 2
    V, w = build_Ts_system(J_s, Cbar_s, sensors)
    sol = solve_lsq(V, w, tol)
    parts = [unvec(sol.x[k * n * n:(k + 1) * n * n], (n, n)) for k in range(4)]
    T = np.block([[parts[0], parts[1]], [parts[2], parts[3]]])
    diag = SolveDiagnostics(sol.rank, V.shape[1], sol.condition, sol.residual)
    if np.linalg.matrix_rank(T) < 2 * n:
        raise RecoveryError(
            f"recovered T_s is singular (system rank {sol.rank} of {V.shape[1]}); "
            "change the type or number of sensors"
        )
    return T, diag


def build_X_system(J_s, J_u, Cbar_s, Cbar_u, T_s_hat, sensors):
    """Coefficient matrix and right side for ``vec(X)``.

    Rows encode ``H1 T_s (-J_s X + X J_u) = 0`` and
    ``C_ac H2 T_s (-J_s X + X J_u) + Cbar_s X = Cbar_u``.
    """
    n = J_s.shape[0] // 2
    nu = J_u.shape[0]
    H1T = T_s_hat[:n]
    H2T = sensors.C_ac @ T_s_hat[n:]
    Iu = np.eye(nu)
    F = np.vstack([
        -kron(Iu, H1T @ J_s) + kron(J_u.T, H1T),
        -kron(Iu, H2T @ J_s) + kron(J_u.T, H2T) + kron(Iu, Cbar_s),
    ])
    g = np.concatenate([np.zeros(n * nu), vec(Cbar_u)])
    return F, g


def solve_X(sj, T_s_hat, sensors, tol=1e-10):
    """Roth coupling block ``X`` (``2n x n_u``); raises when ``F`` is rank deficient."""
    F, g = build_X_system(sj.J_s, sj.J_u, sj.Cbar_s, sj.Cbar_u, T_s_hat, sensors)
    sol = solve_lsq(F, g, tol)
    diag = SolveDiagnostics(sol.rank, F.shape[1], sol.condition, sol.residual)
    if not sol.full_column_rank:
        raise RecoveryError(
            f"coupling system has rank {sol.rank} < {F.shape[1]}; "
            "change the frequency components of the input signal"
        )
    return unvec(sol.x, (sj.J_s.shape[0], sj.J_u.shape[0])), diag


def assemble_physical(sj, T_s_hat, X_hat, sensors, enforce_stability=False):
    """``A_s = T_s J_s T_s^-1``, ``C_s = Cbar_s T_s^-1`` and the normalized matrices."""
    J = np.array(sj.J_s, copy=True)
    reflected = 0
    if enforce_stability:
        for b in sj.structural_blocks:
            if b.sigma > 0:
                a, z = b.span
                idx = np.arange(a, z)
                J[idx, idx] = -J[idx, idx]
                reflected += 1
    Tinv = np.linalg.inv(T_s_hat)
    A = T_s_hat @ J @ Tinv
    C = sj.Cbar_s @ Tinv
    n = A.shape[0] // 2
    resid = float(np.linalg.norm(np.hstack([A[:n, :n], A[:n, n:] - np.eye(n)])))
    est = PhysicalEstimate(A, C, -A[n:, :n], -A[n:, n:], T_s_hat, X_hat, resid)
    est.diagnostics["stability_enforced"] = bool(enforce_stability)
    est.diagnostics["reflected_blocks"] = reflected
    est.diagnostics["unstable_structural_blocks"] = int(
        sum(b.sigma > 0 for b in sj.structural_blocks)
    )
    return est


def input_map(sj, T_s_hat, X_hat):
    """``T_s (-J_s X + X J_u)``, mapping separated signal states to ``B_s u``."""
    return T_s_hat @ (-sj.J_s @ X_hat + X_hat @ sj.J_u)


def reconstruct_input(sj, T_s_hat, X_hat, states, burn_in=0):
    """Effective input ``f_e(k) = T_s (-J_s X + X J_u) xbar_u(k)``.

    Parameters
    ----------
    states : (n_a, N) ndarray
        Filtered state sequence in the identified basis.
    burn_in : int
        Leading samples considered unreliable; they are returned but
        flagged through the returned mask.

    Returns
    -------
    f_e : (2n, N) ndarray
        Equal to ``B_s u(k)``; the lower half is ``M^-1 B u(k)``.
    valid : (N,) bool ndarray
    """
    xbar = sj.to_separated(states)
    n_s = sj.J_s.shape[0]
    f = input_map(sj, T_s_hat, X_hat) @ xbar[n_s:]
    valid = np.ones(states.shape[1], bool)
    valid[:burn_in] = False
    return f, valid


def estimate_Bs(f_e_hat, u, sensors, tol=1e-10):
    """``B_s = F_e U^+`` and ``D_s = C_ac H3 B_s``."""
    u = np.atleast_2d(np.asarray(u, float))
    f_e_hat = np.atleast_2d(np.asarray(f_e_hat, float))
    if f_e_hat.shape[1] != u.shape[1]:
        raise ValueError("f_e_hat and u must have the same length")
    s = np.linalg.svd(u, compute_uv=False)
    if s.size == 0 or s[0] == 0 or np.sum(s > tol * s[0]) < u.shape[0]:
        raise RecoveryError(
            "input record is not persistently exciting of order 1 (rank-deficient U)"
        )
    B = f_e_hat @ np.linalg.pinv(u)
    n = f_e_hat.shape[0] // 2
    return B, sensors.C_ac @ B[n:]


def check_observability(n, r, m, sensors=None, tol=1e-12):
    """Observability of the augmented model from input/output counts.

    ``r < m``: observable; ``r > m``: not observable; ``r = m``: observable
    when only accelerations are measured and ``C_ac`` has full rank.
    """
    if r < m:
        return {"observable": True, "reason": f"fewer inputs than outputs (r={r} < m={m})"}
    if r > m:
        return {"observable": False, "reason": f"more inputs than outputs (r={r} > m={m})"}
    if sensors is None:
        return {"observable": False, "reason": "r = m requires sensor matrices to decide"}
    pv_zero = np.allclose(sensors.C_p, 0, atol=tol) and np.allclose(sensors.C_v, 0, atol=tol)
    ac_rank = np.linalg.matrix_rank(sensors.C_ac) if sensors.C_ac.size else 0
    if pv_zero and ac_rank == min(sensors.C_ac.shape) and ac_rank == m:
        return {"observable": True,
                "reason": "r = m with acceleration-only sensing and full-rank C_ac"}
    if not pv_zero:
        return {"observable": False,
                "reason": "r = m with displacement or velocity sensing is not covered; reported unobservable"}
    return {"observable": False, "reason": "r = m with rank-deficient C_ac"}


def dc_observable(sensors, tol=1e-12):
    """Whether a constant input leaves a trace in steady-state outputs.

    A static deflection is seen only through displacement sensing.
    """
    return not np.allclose(sensors.C_p, 0, atol=tol)
