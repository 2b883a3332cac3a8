"""Output-only (purely stochastic) subspace identification.

Block Hankel construction, LQ-based orthogonal projections, weighted SVD
with order selection, realization of ``(A, C, G, Lambda0)``, the forward
Riccati equation and the innovation-form Kalman filter.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import pinv


class RankDeficiencyWarning(UserWarning):
    """Past-output block is numerically rank deficient."""


class RiccatiError(RuntimeError):
    """Forward Riccati iteration failed (invalid covariance realization)."""


@dataclass(frozen=True)
class PEResult:
    rank: int
    satisfied: bool
    required: int


@dataclass(frozen=True)
class HankelPartition:
    """Stacked block Hankel matrix ``[Y_p; Y_f]`` of ``2 i`` block rows."""

    H: np.ndarray
    i: int
    j: int
    m: int
    step: int = 1

    @property
    def Y_p(self):
        return self.H[: self.m * self.i]

    @property
    def Y_f(self):
        return self.H[self.m * self.i:]

    @property
    def Y_p_plus(self):
        return self.H[: self.m * (self.i + 1)]

    @property
    def Y_f_minus(self):
        return self.H[self.m * (self.i + 1):]


@dataclass(frozen=True)
class Projections:
    """Projections in LQ coordinates: ``O_i = K_i Q^T``, ``O_{i-1} = K_i_minus Q^T``.

    ``L`` is the lower-triangular factor of the stacked Hankel matrix
    ``H = L Q^T``. ``Q`` is kept only when requested, since its column
    count equals the record length; all second-order statistics follow
    from the coefficients because ``Q`` has orthonormal columns.
    """

    K_i: np.ndarray
    K_i_minus: np.ndarray
    L: np.ndarray
    past_rank: int
    rank_deficient: bool
    Q: np.ndarray | None = None

    @property
    def O_i(self):
        return self._materialize(self.K_i)

    @property
    def O_i_minus(self):
        return self._materialize(self.K_i_minus)

    def _materialize(self, K):
        if self.Q is None:
            raise ValueError("projection computed without Q; call project(..., keep_q=True)")
        return K @ self.Q.T


@dataclass(frozen=True)
class SVDResult:
    U1: np.ndarray
    S1: np.ndarray
    V1: np.ndarray
    order: int
    singular_values: np.ndarray
    W1: np.ndarray


@dataclass(frozen=True)
class StochasticRealization:
    A_d: np.ndarray
    C_d: np.ndarray
    G: np.ndarray
    Lambda0: np.ndarray
    d_offset: np.ndarray
    singular_values: np.ndarray
    order: int
    T_s: float | None = None
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    S: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class KalmanModel:
    A_d: np.ndarray
    C_d: np.ndarray
    K_f: np.ndarray
    P: np.ndarray
    innovation_cov: np.ndarray
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0


@dataclass(frozen=True)
class StateEstimate:
    x: np.ndarray  # (n, N + 1)
    innovations: np.ndarray  # (m, N)
    burn_in: int


def pe_order(U, i, start=0, n_cols=None, tol=1e-9):
    """Persistent-excitation order check on an input record.

    Builds the ``i``-block-row Hankel matrix of ``U`` beginning at sample
    ``start`` and returns the rank of ``(1/N) U_h U_h^T``; the record is
    persistently exciting of order ``i`` when that rank equals ``r i``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    r, N = U.shape
    if n_cols is None:
        n_cols = N - start - i + 1
    if n_cols < 1 or N < start + n_cols + i - 1:
        raise ValueError(f"record of {N} samples too short for i={i}, start={start}")
    Uh = np.vstack([U[:, start + k:start + k + n_cols] for k in range(i)])
    gram = Uh @ Uh.T / n_cols
    s = np.linalg.svd(gram, compute_uv=False)
    rank = int(np.sum(s > tol * max(s[0], np.finfo(float).tiny))) if s[0] > 0 else 0
    return PEResult(rank, rank == r * i, r * i)


def default_block_rows(order, m):
    """Block-row count ``ceil(1.5 order / m) + 2``."""
    return int(math.ceil(1.5 * order / m)) + 2


def block_hankel(y, i, j=None, step=1):
    """Past/future block Hankel partition of an ``(m, N)`` output record.

    Column ``c`` of block row ``b`` holds ``y(b step + c)``; the first ``i``
    block rows form ``Y_p`` and the next ``i`` form ``Y_f``. With
    ``step = 1`` this is the usual layout; a larger ``step`` spaces the
    block rows ``step`` samples apart while the columns still advance by
    one sample, which identifies ``(A^step, C)`` from all polyphase
    components of an oversampled record at once.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m, N = y.shape
    if i < 1:
        raise ValueError("i must be >= 1")
    if step < 1:
        raise ValueError("step must be >= 1")
    span = (2 * i - 1) * step
    if j is None:
        j = N - span
    if j < 1 or N < span + j:
        raise ValueError(f"record of {N} samples too short for i={i}, j={j}, step={step}")
    H = np.empty((2 * i * m, j))
    for b in range(2 * i):
        H[b * m:(b + 1) * m] = y[:, b * step:b * step + j]
    return HankelPartition(H, i, j, m, step)


def project(h, rank_tol=1e-10, keep_q=False):
    """Orthogonal projections ``Y_f / Y_p`` and ``Y_f^- / Y_p^+``.

    Uses the LQ factorization of the stacked Hankel matrix. When the
    past block is rank deficient the projection falls back to the
    pseudo-inverse form ``Y_f Y_p^T (Y_p Y_p^T)^+ Y_p`` (truncated at
    ``rank_tol`` relative) and a :class:`RankDeficiencyWarning` is issued.
    """
    m, i = h.m, h.i
    if keep_q:
        Q, Rt = np.linalg.qr(h.H.T, mode="reduced")
    else:
        Q, Rt = None, np.linalg.qr(h.H.T, mode="r")
    L = Rt.T  # H = L Q^T
    k = L.shape[1]
    p = m * i
    pp = m * (i + 1)

    def _proj(L_pp, L_fp):
        _, s, Vt = np.linalg.svd(L_pp)
        rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
        K = np.zeros((L_fp.shape[0], k))
        if rank == L_pp.shape[0]:
            K[:, :L_pp.shape[0]] = L_fp
            return K, rank, False
        # Y_f Y_p^T (Y_p Y_p^T)^+ Y_p reduces to L_fp V_r V_r^T Q_p^T
        Vr = Vt[:rank].T
        K[:, :L_pp.shape[0]] = (L_fp @ Vr) @ Vr.T
        return K, rank, True

    K_i, rank, deficient = _proj(L[:p, :p], L[p:, :p])
    K_m, _, deficient_m = _proj(L[:pp, :pp], L[pp:, :pp])
    if deficient or deficient_m:
        warnings.warn(
            f"past output block has numerical rank {rank} < {p}; projecting with a pseudo-inverse",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return Projections(K_i, K_m, L, rank, deficient, Q)


def gap_order(s, max_order=None):
    """Order at the largest logarithmic gap of a singular spectrum."""
    s = np.asarray(s, dtype=float)
    pos = s[s > 0]
    if pos.size < 2:
        return int(pos.size)
    ratios = np.log(pos[:-1]) - np.log(pos[1:])
    if max_order is not None:
        ratios = ratios[:max_order]
    return int(np.argmax(ratios)) + 1


def weighted_svd(O_i, W1=None, W2=None, order_hint=None):
    """SVD of ``W1 O_i W2`` truncated at ``order_hint`` or the largest gap.

    ``O_i`` may also be given in LQ coordinates (``Projections.K_i``); the
    left singular vectors and singular values are the same.
    """
    O_i = np.asarray(O_i, dtype=float)
    if W1 is None:
        W1 = np.eye(O_i.shape[0])
    M = W1 @ O_i
    if W2 is not None:
        M = M @ W2
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    order = gap_order(s) if order_hint is None else int(order_hint)
    if not 1 <= order <= s.size:
        raise ValueError(f"order {order} outside 1..{s.size}")
    return SVDResult(U[:, :order], s[:order], Vt[:order].T, order, s, W1)


def realize(svd, proj, h, T_s=None, y=None, remove_mean=False, method="shift",
            noise_floor=1e-8):
    """Realize ``(A, C, G, Lambda0)`` from the weighted SVD.

    ``Gamma_i = W1^-1 U1 S1^(1/2)``. ``A`` comes from shift invariance of
    ``Gamma_i`` (``method="shift"``) or from least squares on the state
    sequences (``method="states"``); ``C`` is the first block row. State
    sequences ``Z_i = Gamma_i^+ O_i`` and ``Z_{i+1} = Gamma_{i-1}^+ O_{i-1}``
    give the residual covariances ``Q, S, R``; ``Sigma`` is the sample state
    covariance, ``G = A Sigma C^T + S`` and ``Lambda0 = C Sigma C^T + R``.

    ``noise_floor`` adds ``noise_floor * ||Lambda0||`` to ``R`` so that
    noise-free data still yield a positive definite innovation covariance.
    """
    m, j = h.m, h.j
    n = svd.order
    Gamma = np.linalg.solve(svd.W1, svd.U1 * np.sqrt(svd.S1))
    Gamma_up = Gamma[:-m]
    # row-space quantities as coefficients of Q^T
    Z_i = pinv(Gamma) @ proj.K_i
    Z_ip = pinv(Gamma_up) @ proj.K_i_minus
    Y_ii = proj.L[m * h.i:m * (h.i + 1)]
    if method == "shift":
        A = pinv(Gamma_up) @ Gamma[m:]
        C = Gamma[:m].copy()
    elif method == "states":
        AC = np.vstack([Z_ip, Y_ii]) @ pinv(Z_i)
        A, C = AC[:n], AC[n:]
    else:
        raise ValueError(f"unknown realization method {method!r}")
    cond = float(np.linalg.cond(Gamma_up))
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"shift-invariance solve is ill-conditioned (cond={cond:.3e})")
    W = Z_ip - A @ Z_i
    V = Y_ii - C @ Z_i
    Q = W @ W.T / j
    S = W @ V.T / j
    R = V @ V.T / j
    Sigma = Z_i @ Z_i.T / j
    Lambda0 = C @ Sigma @ C.T + R
    floor = noise_floor * max(np.linalg.norm(Lambda0, 2), np.finfo(float).tiny)
    R = R + floor * np.eye(m)
    Lambda0 = Lambda0 + floor * np.eye(m)
    G = A @ Sigma @ C.T + S
    if y is not None and remove_mean:
        d = np.atleast_2d(np.asarray(y, float)).mean(axis=1)
    else:
        d = np.zeros(m)
    return StochasticRealization(
        A, C, G, Lambda0, d, svd.singular_values, n, T_s, Q, R, S, Sigma,
        {"shift_condition": cond, "past_rank": proj.past_rank,
         "rank_deficient_past": proj.rank_deficient, "noise_floor": floor,
         "noise_floor_rel": noise_floor},
    )


def riccati_residual(P, A, C, G, Lambda0):
    """Relative residual of the forward Riccati equation at ``P``."""
    Gt = G - A @ P @ C.T
    rhs = A @ P @ A.T + Gt @ np.linalg.solve(Lambda0 - C @ P @ C.T, Gt.T)
    return float(np.linalg.norm(P - rhs) / max(np.linalg.norm(P), 1.0))


def solve_riccati(re, tol=1e-10, max_iter=10000, form="covariance"):
    """Forward Riccati equation by fixed-point iteration.

    With ``form="covariance"`` the iteration is
    ``P <- A P A^T + (G - A P C^T)(Lambda0 - C P C^T)^-1 (G - A P C^T)^T``
    from ``P = 0`` until ``||dP|| <= tol ||P||``, and the steady-state gain
    is ``K_f = (G - A P C^T)(Lambda0 - C P C^T)^-1``.

    ``form="error"`` iterates the same recursion written for the error
    covariance ``E = Sigma - P`` using the residual statistics ``Q, S, R``
    of the realization. It starts from ``E = Sigma`` and stays positive
    semidefinite when the covariance sequence is not positive real, which
    happens when ``A`` has eigenvalues on the unit circle.
    """
    if form == "error":
        return _solve_riccati_error(re, tol, max_iter)
    if form != "covariance":
        raise ValueError(f"unknown Riccati form {form!r}")
    A, C, G, L0 = re.A_d, re.C_d, re.G, re.Lambda0
    n = A.shape[0]
    P = np.zeros((n, n))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        inn = L0 - C @ P @ C.T
        try:
            np.linalg.cholesky(0.5 * (inn + inn.T))
        except np.linalg.LinAlgError as exc:
            raise RiccatiError(
                f"innovation covariance lost positive definiteness at iteration {it}"
            ) from exc
        Gt = G - A @ P @ C.T
        P_new = A @ P @ A.T + Gt @ np.linalg.solve(inn, Gt.T)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            raise RiccatiError(f"Riccati iteration diverged at iteration {it}")
        step = np.linalg.norm(P_new - P)
        P = P_new
        if step <= tol * max(np.linalg.norm(P), np.finfo(float).tiny):
            converged = True
            break
    inn = L0 - C @ P @ C.T
    try:
        np.linalg.cholesky(0.5 * (inn + inn.T))
    except np.linalg.LinAlgError as exc:
        raise RiccatiError("innovation covariance is not positive definite") from exc
    K = (G - A @ P @ C.T) @ np.linalg.inv(inn)
    return KalmanModel(A, C, K, P, inn, it, converged, riccati_residual(P, A, C, G, L0))


def _solve_riccati_error(re, tol, max_iter):
    A, C = re.A_d, re.C_d
    if re.Q is None or re.R is None or re.S is None or re.Sigma is None:
        raise RiccatiError("error-covariance form needs the residual statistics Q, S, R and Sigma")
    n = A.shape[0]
    q_floor = re.diagnostics.get("noise_floor_rel", 1e-8) * max(np.linalg.norm(re.Sigma, 2), 1e-300)
    Q = 0.5 * (re.Q + re.Q.T) + q_floor * np.eye(n)
    R, S = re.R, re.S
    E = np.array(re.Sigma, copy=True)
    sigma_scale = max(np.linalg.norm(E), np.finfo(float).tiny)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        inn = C @ E @ C.T + R
        Kg = (A @ E @ C.T + S) @ np.linalg.inv(inn)
        E_new = A @ E @ A.T + Q - Kg @ inn @ Kg.T
        E_new = 0.5 * (E_new + E_new.T)
        if not np.all(np.isfinite(E_new)):
            raise RiccatiError(f"error-covariance iteration diverged at iteration {it}")
        step = np.linalg.norm(E_new - E)
        E = E_new
        # E may shrink to zero for an exact model; measure steps against Sigma
        if step <= tol * max(np.linalg.norm(E), sigma_scale):
            converged = True
            break
    inn = C @ E @ C.T + R
    K = (A @ E @ C.T + S) @ np.linalg.inv(inn)
    resid = E - (A @ E @ A.T + Q - K @ inn @ K.T)
    residual = float(np.linalg.norm(resid) / max(np.linalg.norm(E), 1.0))
    return KalmanModel(A, C, K, re.Sigma - E, inn, it, converged, residual)


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def recommended_burn_in(km, N, cap_fraction=0.1):
    """Ten settling lengths of ``A - K_f C``, capped at ``cap_fraction N``."""
    rho = spectral_radius(km.A_d - km.K_f @ km.C_d)
    if rho >= 1.0:
        return int(cap_fraction * N)
    settle = 1.0 / max(1.0 - rho, 1e-12)
    return int(min(math.ceil(10.0 * settle), cap_fraction * N))


def initial_state(A, C, y, d=None, window=None):
    """Least-squares initial state from the first ``window`` outputs."""
    y = np.atleast_2d(np.asarray(y, float))
    m, N = y.shape
    n = A.shape[0]
    if window is None:
        window = min(N, max(4 * n, 200))
    if d is not None:
        y = y - np.asarray(d).reshape(-1, 1)
    O = np.empty((window * m, n))
    M = C.copy()
    for k in range(window):
        O[k * m:(k + 1) * m] = M
        M = M @ A
    x0, *_ = np.linalg.lstsq(O, y[:, :window].T.reshape(-1), rcond=None)
    return x0


def kalman_states(km, y, x0=None, d_offset=None, burn_in=None, step=1):
    """Innovation-form filter ``x(k+1) = A x(k) + K_f (y(k) - d - C x(k))``.

    Returns the one-step predicted states at the sample times of ``y``,
    the innovations and the recommended (or given) burn-in length. With
    ``step > 1`` the model describes every ``step``-th sample, and each
    polyphase component ``y[:, p::step]`` is filtered separately; ``x0``
    is then a sequence of per-phase initial states (fitted by least
    squares when omitted).
    """
    y = np.atleast_2d(np.asarray(y, float))
    m, N = y.shape
    A, C, K = km.A_d, km.C_d, km.K_f
    n = A.shape[0]
    d = np.zeros(m) if d_offset is None else np.asarray(d_offset, float)
    yc = y - d[:, None]
    x = np.empty((n, N))
    e = np.empty((m, N))
    F = A - K @ C
    for p in range(step):
        sub = yc[:, p::step]
        if x0 is None:
            xk = initial_state(A, C, sub)
        elif step == 1:
            xk = np.asarray(x0, float)
        else:
            xk = np.asarray(x0[p], float)
        idx = range(p, N, step)
        for col, k in enumerate(idx):
            x[:, k] = xk
            e[:, k] = sub[:, col] - C @ xk
            xk = F @ xk + K @ sub[:, col]
    if burn_in is None:
        burn_in = step * recommended_burn_in(km, -(-N // step))
    return StateEstimate(x, e, int(burn_in))


def identify(y, order, i=None, j=None, T_s=None, W1=None, remove_mean=False,
             method="shift", rank_tol=1e-10, noise_floor=1e-8, step=1):
    """Block Hankel, projection, SVD and realization in one call.

    With ``step > 1`` the returned pair describes every ``step``-th
    sample and its ``T_s`` is ``step * T_s``.
    """
    y = np.atleast_2d(np.asarray(y, float))
    m = y.shape[0]
    d = y.mean(axis=1) if remove_mean else np.zeros(m)
    if i is None:
        i = default_block_rows(order if order else m, m)
    h = block_hankel(y - d[:, None], i, j, step)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        proj = project(h, rank_tol)
    svd = weighted_svd(proj.K_i, W1, None, order)
    T_eff = None if T_s is None else T_s * step
    re = realize(svd, proj, h, T_eff, y, remove_mean, method, noise_floor)
    re.diagnostics["block_rows"] = i
    re.diagnostics["lag_step"] = step
    re.diagnostics["warnings"] = [str(w.message) for w in caught]
    return re
