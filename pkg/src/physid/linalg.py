"""Dense real linear-algebra kernel.

Kronecker/vectorization helpers, a thresholded pseudo-inverse, the real
Jordan decomposition, a principal matrix logarithm built on it, and a
least-squares solver that reports rank and conditioning.
"""
from dataclasses import dataclass, field

import numpy as np


class DefectiveMatrixError(np.linalg.LinAlgError):
    """Raised when a real Jordan decomposition cannot be computed reliably."""


class LogDomainError(ValueError):
    """Raised when a matrix has an eigenvalue on the closed negative real axis."""

    def __init__(self, eigenvalue, message=None):
        self.eigenvalue = eigenvalue
        super().__init__(
            message
            or f"matrix logarithm undefined: eigenvalue {eigenvalue!r} lies on "
            "the closed negative real axis"
        )


@dataclass(frozen=True)
class JordanBlock:
    kind: str  # "real" or "complex-pair"
    sigma: float
    omega: float
    multiplicity: int
    span: tuple  # (start, stop) row/column range inside J

    @property
    def size(self):
        return self.span[1] - self.span[0]

    @property
    def eigenvalue(self):
        return complex(self.sigma, self.omega)

    def eigenvalues(self):
        """All eigenvalues carried by the block (with multiplicity)."""
        if self.kind == "real":
            return [complex(self.sigma, 0.0)] * self.multiplicity
        lam = complex(self.sigma, self.omega)
        return [lam, lam.conjugate()] * self.multiplicity


@dataclass(frozen=True)
class JordanDecomposition:
    T: np.ndarray
    J: np.ndarray
    blocks: tuple = field(default_factory=tuple)

    def reconstruct(self):
        return self.T @ self.J @ np.linalg.inv(self.T)

    def eigenvalues(self):
        return np.array([lam for b in self.blocks for lam in b.eigenvalues()])


@dataclass(frozen=True)
class LeastSquaresSolution:
    x: np.ndarray
    rank: int
    residual: float
    condition: float
    n_cols: int

    @property
    def full_column_rank(self):
        return self.rank == self.n_cols


def kron(A, B):
    """Kronecker product of two real matrices."""
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def vec(A):
    """Stack the columns of ``A`` into a single column vector."""
    A = np.atleast_2d(A) if np.ndim(A) < 2 else np.asarray(A)
    return A.reshape(-1, order="F")


def unvec(v, shape):
    """Inverse of :func:`vec`."""
    return np.asarray(v).reshape(shape, order="F")


def pinv(A, tol=1e-10):
    """SVD pseudo-inverse truncating singular values below ``tol * s_max``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros(A.T.shape)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def solve_lsq(V, w, tol=1e-10):
    """Minimum-norm least-squares solve of ``V x = w`` with diagnostics.

    Rank deficiency is reported through ``rank``/``full_column_rank`` and
    never raised; the caller decides what a deficient system means.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    w = np.asarray(w, dtype=float).reshape(-1)
    if V.shape[0] != w.shape[0]:
        raise ValueError(f"row mismatch: V has {V.shape[0]} rows, w has {w.shape[0]}")
    U, s, Vt = np.linalg.svd(V, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        x = np.zeros(V.shape[1])
        return LeastSquaresSolution(x, 0, float(np.linalg.norm(w)), np.inf, V.shape[1])
    keep = s > tol * s[0]
    x = Vt[keep].T @ ((U[:, keep].T @ w) / s[keep])
    rank = int(keep.sum())
    residual = float(np.linalg.norm(V @ x - w))
    condition = float(s[0] / s[keep][-1])
    return LeastSquaresSolution(x, rank, residual, condition, V.shape[1])


# --------------------------------------------------------------------------
# real Jordan decomposition


def _cluster(eigs, tol):
    """Group eigenvalue indices whose members lie within ``tol`` (relative)."""
    remaining = list(range(len(eigs)))
    clusters = []
    while remaining:
        seed = remaining.pop(0)
        members = [seed]
        changed = True
        while changed:
            changed = False
            for k in list(remaining):
                if any(
                    abs(eigs[k] - eigs[j]) <= tol * max(1.0, abs(eigs[j]))
                    for j in members
                ):
                    members.append(k)
                    remaining.remove(k)
                    changed = True
        clusters.append(sorted(members))
    return clusters


def _normalize(v):
    """Rotate a complex vector so its largest entry is real positive; unit norm."""
    k = int(np.argmax(np.abs(v)))
    v = v * (abs(v[k]) / v[k])
    return v / np.linalg.norm(v)


def _chain(A, lam, s, tol):
    """Generalized eigenvectors ``[v1, ..., vs]`` of a single Jordan chain.

    Returns None when the eigenvalue is semisimple (``s`` independent
    eigenvectors); raises DefectiveMatrixError for mixed chain structures.
    """
    n = A.shape[0]
    N = A - lam * np.eye(n)
    sv = np.linalg.svd(N, compute_uv=False)
    scale = max(np.linalg.norm(A, 2), 1.0)
    small = sv < np.sqrt(tol) * scale
    geometric = int(small.sum())
    if geometric >= s:
        return None
    if geometric != 1:
        raise DefectiveMatrixError(
            f"eigenvalue {lam} has algebraic multiplicity {s} and geometric "
            f"multiplicity {geometric}; only single Jordan chains are supported"
        )
    Ns = np.linalg.matrix_power(N, s)
    _, _, Vh = np.linalg.svd(Ns)
    basis = Vh[-s:].conj().T  # generalized eigenspace
    Nm = np.linalg.matrix_power(N, s - 1) @ basis
    _, _, Wh = np.linalg.svd(Nm)
    top = basis @ Wh[0].conj()
    chain = [top]
    for _ in range(s - 1):
        chain.append(N @ chain[-1])
    chain = chain[::-1]
    k = int(np.argmax(np.abs(chain[0])))
    phase = abs(chain[0][k]) / chain[0][k]
    scale0 = np.linalg.norm(chain[0])
    return [c * phase / scale0 for c in chain]


def real_jordan(A, tol=1e-6, cond_cap=1e12):
    """Real Jordan decomposition ``A = T J T^-1``.

    Complex pairs ``sigma +/- j omega`` become 2x2 blocks
    ``[[sigma, omega], [-omega, sigma]]`` built from the real and imaginary
    parts of the eigenvector belonging to ``sigma + j omega``. Blocks are
    ordered by ``omega`` ascending, then ``sigma`` descending.

    Parameters
    ----------
    A : (n, n) array_like
    tol : float
        Relative clustering tolerance for repeated eigenvalues. A Jordan
        chain of length ``s`` splits by roughly ``eps**(1/s)``, so long
        chains need a looser value than the default.
    cond_cap : float
        Largest admissible condition number of ``T``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    eigs, vecs = np.linalg.eig(A)

    # cluster the full spectrum first: a perturbed repeated real eigenvalue
    # may come back as a real value plus a nearly real conjugate pair
    scale = max(1.0, np.max(np.abs(eigs)) if n else 1.0)
    imag_tol = 1e-13 * scale
    clusters = _cluster(list(eigs), tol)

    entries = []  # (omega, -sigma, first_index, columns, block)
    for idx in clusters:
        lam = np.mean(eigs[idx])
        is_real = abs(lam.imag) <= imag_tol
        if not is_real and lam.imag < 0:
            continue  # the conjugate cluster carries this pair
        if is_real:
            lam = complex(lam.real, 0.0)
        s = len(idx)
        chain = _chain(A, lam, s, tol) if s > 1 else None
        if chain is None:
            groups = [[vecs[:, k]] for k in idx]
        else:
            groups = [chain]
        for g in groups:
            if is_real:
                cols = []
                for v in g:
                    vr = np.real(v) if chain is not None else np.real(_normalize(v))
                    cols.append(vr)
                mult = len(g)
                entries.append((0.0, -lam.real, min(idx), cols, ("real", lam.real, 0.0, mult)))
            else:
                cols = []
                for v in g:
                    vv = v if chain is not None else _normalize(v)
                    cols.extend([np.real(vv), np.imag(vv)])
                mult = len(g)
                om = abs(lam.imag)
                entries.append((om, -lam.real, min(idx), cols, ("complex-pair", lam.real, om, mult)))

    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    T = np.zeros((n, n))
    J = np.zeros((n, n))
    blocks = []
    pos = 0
    for _, _, _, cols, (kind, sig, om, mult) in entries:
        width = len(cols)
        T[:, pos:pos + width] = np.column_stack(cols)
        step = 1 if kind == "real" else 2
        C = np.array([[sig]]) if kind == "real" else np.array([[sig, om], [-om, sig]])
        for b in range(mult):
            r = pos + b * step
            J[r:r + step, r:r + step] = C
            if b + 1 < mult:
                J[r:r + step, r + step:r + 2 * step] = np.eye(step)
        blocks.append(JordanBlock(kind, float(sig), float(om), mult, (pos, pos + width)))
        pos += width
    if pos != n:
        raise DefectiveMatrixError(
            f"eigenvalue bookkeeping failed ({pos} of {n} columns assigned); "
            "conjugate pairs could not be matched"
        )
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > cond_cap:
        raise DefectiveMatrixError(
            f"eigenvector matrix is ill-conditioned (cond={cond:.3e} > {cond_cap:.1e})"
        )
    return JordanDecomposition(T, J, tuple(blocks))


# --------------------------------------------------------------------------
# principal logarithm


def _log_block(block, J_block, unit_tol):
    """Logarithm of one (possibly repeated) real Jordan block."""
    step = 1 if block.kind == "real" else 2
    mult = block.multiplicity
    sig, om = block.sigma, block.omega
    if block.kind == "real":
        if unit_tol > 0 and abs(sig - 1.0) <= unit_tol:
            logC = np.zeros((1, 1))
        elif sig <= 0.0:
            raise LogDomainError(complex(sig, 0.0))
        else:
            logC = np.array([[np.log(sig)]])
        Cinv = np.array([[1.0 / sig]])
    else:
        r = np.hypot(sig, om)
        theta = np.arctan2(om, sig)
        logC = np.array([[np.log(r), theta], [-theta, np.log(r)]])
        Cinv = np.array([[sig, -om], [om, sig]]) / r**2
    out = np.kron(np.eye(mult), logC)
    if mult > 1:
        # J = diag(C) (I + diag(C^-1) S), S block-superdiagonal identity
        S = np.kron(np.eye(mult, k=1), np.eye(step))
        Nn = np.kron(np.eye(mult), Cinv) @ S
        term = np.eye(mult * step)
        for k in range(1, mult):
            term = term @ Nn
            out = out + ((-1) ** (k + 1) / k) * term
    return out


def principal_log(A, unit_tol=0.0, tol=1e-6):
    """Real principal logarithm of ``A`` through its real Jordan form.

    ``unit_tol > 0`` maps real eigenvalues within ``unit_tol`` of 1 to an
    exact zero logarithm.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    dec = real_jordan(A, tol=tol)
    for b in dec.blocks:
        if b.kind == "real" and b.sigma <= 0.0:
            raise LogDomainError(complex(b.sigma, 0.0))
    L = np.zeros_like(A)
    for b in dec.blocks:
        a, z = b.span
        L[a:z, a:z] = _log_block(b, dec.J[a:z, a:z], unit_tol)
    return dec.T @ L @ np.linalg.inv(dec.T)
