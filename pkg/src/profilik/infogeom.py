"""Dense symmetric-matrix kernels and block/Schur information geometry.

Everything here operates on plain float64 numpy arrays.  A single
eigendecomposition backend drives all matrix functions (sqrt, inverse
sqrt, log-det, spectral norm) with one rank-deficiency policy:
eigenvalues below ``RANK_RTOL * lambda_max`` count as zero.

The target/nuisance split of a p* x p* information pair (D0^2, V0^2)
is represented by :class:`BlockInfoPair`; Schur complements, efficient
scores and identifiability diagnostics are computed from its block
views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYM_RTOL = 1e-12          # symmetry tolerance, relative per entry
PSD_RTOL = 1e-10          # PSD construction slack, relative to spectral norm
RANK_RTOL = 1e-12         # eigenvalues below RANK_RTOL*lambda_max are rank-deficient
DIM_CAP_DEFAULT = 4096    # desk-scale guard; override via as_sym(dim_cap=...)


class NumericalRankError(ValueError):
    """A matrix is numerically singular or fails a definiteness precondition."""


def as_sym(M, *, psd_check=False, dim_cap=DIM_CAP_DEFAULT) -> np.ndarray:
    """Validate and return a dense symmetric float64 matrix.

    Entries must satisfy |M[i,j] - M[j,i]| <= 1e-12*(1+|M[i,j]|).  The
    returned array is exactly symmetrized (average of M and M.T) so
    downstream eigendecompositions see a bitwise-symmetric input.

    With ``psd_check=True`` construction additionally requires
    min eigenvalue >= -1e-10 * spectral norm.
    """
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] > dim_cap:
        raise ValueError(f"dimension {A.shape[0]} exceeds cap {dim_cap}")
    if A.size and not np.all(np.abs(A - A.T) <= SYM_RTOL * (1.0 + np.abs(A))):
        raise ValueError("matrix is not symmetric within tolerance")
    A = 0.5 * (A + A.T)
    if psd_check and A.size:
        w = np.linalg.eigvalsh(A)
        lam_max = float(np.max(np.abs(w))) if w.size else 0.0
        if w.size and float(np.min(w)) < -PSD_RTOL * lam_max:
            raise NumericalRankError(
                f"matrix is not PSD: min eigenvalue {np.min(w):.3e} "
                f"< -{PSD_RTOL:g} * spectral norm {lam_max:.3e}"
            )
    return A


def _eigh(M):
    A = as_sym(M)
    if A.size == 0:
        return np.empty(0), np.empty((0, 0))
    return np.linalg.eigh(A)


def matrix_kernels(M) -> dict:
    """Eigendecomposition-backed matrix functions of a symmetric matrix.

    Returns a dict with keys ``sqrt``, ``inv_sqrt``, ``spectral_norm``,
    ``log_det``, ``min_eig``.  ``sqrt`` requires PSD; ``inv_sqrt`` and
    ``log_det`` require positive definiteness under the rank policy.
    Entries whose precondition fails are reported by raising
    :class:`NumericalRankError` from the accessor helpers below; this
    dict variant computes all five eagerly and raises on the first
    violated precondition.
    """
    w, U = _eigh(M)
    lam_max = float(np.max(np.abs(w))) if w.size else 0.0
    tol = RANK_RTOL * lam_max
    if w.size and float(np.min(w)) < -max(tol, 0.0) - PSD_RTOL * lam_max:
        raise NumericalRankError("sqrt requires a PSD matrix")
    if w.size and float(np.min(w)) <= tol:
        raise NumericalRankError(
            "inv_sqrt/log_det require positive definiteness: "
            f"min eigenvalue {np.min(w) if w.size else 0.0:.3e} <= {tol:.3e}"
        )
    w_pos = np.maximum(w, 0.0)
    sqrt = (U * np.sqrt(w_pos)) @ U.T
    inv_sqrt = (U * (1.0 / np.sqrt(w_pos))) @ U.T if w.size else np.empty((0, 0))
    return {
        "sqrt": sqrt,
        "inv_sqrt": inv_sqrt,
        "spectral_norm": lam_max,
        "log_det": float(np.sum(np.log(w))) if w.size else 0.0,
        "min_eig": float(np.min(w)) if w.size else 0.0,
    }


def sym_sqrt(M) -> np.ndarray:
    """Symmetric PSD square root (eigenvalues clipped at zero after PSD check)."""
    w, U = _eigh(M)
    if w.size == 0:
        return np.empty((0, 0))
    lam_max = float(np.max(np.abs(w)))
    if float(np.min(w)) < -PSD_RTOL * lam_max:
        raise NumericalRankError("sym_sqrt requires a PSD matrix")
    return (U * np.sqrt(np.maximum(w, 0.0))) @ U.T


def sym_inv_sqrt(M, *, name="matrix") -> np.ndarray:
    """Inverse symmetric square root; fails on numerical rank deficiency."""
    w, U = _eigh(M)
    if w.size == 0:
        return np.empty((0, 0))
    lam_max = float(np.max(np.abs(w)))
    if float(np.min(w)) <= RANK_RTOL * lam_max:
        raise NumericalRankError(
            f"{name} is numerically rank deficient "
            f"(min eigenvalue {np.min(w):.3e}, spectral norm {lam_max:.3e})"
        )
    return (U * (1.0 / np.sqrt(w))) @ U.T


def sym_solve(M, b, *, name="matrix") -> np.ndarray:
    """Solve M x = b for symmetric positive definite M under the rank policy."""
    w, U = _eigh(M)
    if w.size == 0:
        return np.zeros_like(np.asarray(b, dtype=np.float64))
    lam_max = float(np.max(np.abs(w)))
    if float(np.min(w)) <= RANK_RTOL * lam_max:
        raise NumericalRankError(f"{name} is numerically rank deficient")
    return U @ ((U.T @ np.asarray(b, dtype=np.float64)).T / w).T


def spectral_norm(M) -> float:
    w, _ = _eigh(M)
    return float(np.max(np.abs(w))) if w.size else 0.0


def min_eig(M) -> float:
    w, _ = _eigh(M)
    return float(np.min(w)) if w.size else 0.0


def block_split(M, p: int):
    """Split a symmetric matrix into (TT, TE, EE) blocks at index p.

    TT is p x p, TE is p x p1, EE is p1 x p1 with p1 = dim - p.
    p1 = 0 yields empty TE and EE.  Reassembling the blocks reproduces
    the input bit-exactly (views are copied into fresh arrays).
    """
    A = as_sym(M)
    d = A.shape[0]
    if not (1 <= p <= d):
        raise ValueError(f"split index p={p} out of range for dim {d}")
    return A[:p, :p].copy(), A[:p, p:].copy(), A[p:, p:].copy()


def block_join(TT, TE, EE) -> np.ndarray:
    """Inverse of :func:`block_split`."""
    TT = np.asarray(TT, dtype=np.float64)
    TE = np.asarray(TE, dtype=np.float64)
    EE = np.asarray(EE, dtype=np.float64)
    p, p1 = TT.shape[0], EE.shape[0]
    out = np.empty((p + p1, p + p1))
    out[:p, :p] = TT
    out[:p, p:] = TE
    out[p:, :p] = TE.T
    out[p:, p:] = EE
    return out


@dataclass(frozen=True)
class BlockInfoPair:
    """Information pair (D0^2, V0^2) with a target/nuisance block split.

    ``D2`` plays the role of the (quasi) Fisher information
    -grad^2 E L(upsilon*), ``V2`` the score variability Var{grad L(upsilon*)};
    both are p* x p* and share the split index ``p``.
    """

    D2: np.ndarray
    V2: np.ndarray
    p: int

    def __post_init__(self):
        object.__setattr__(self, "D2", as_sym(self.D2))
        object.__setattr__(self, "V2", as_sym(self.V2))
        if self.D2.shape != self.V2.shape:
            raise ValueError("D2 and V2 must share the same dimension")
        if not (1 <= self.p <= self.D2.shape[0]):
            raise ValueError(f"split index p={self.p} out of range")

    @property
    def p_star(self) -> int:
        return self.D2.shape[0]

    @property
    def p1(self) -> int:
        return self.p_star - self.p

    # D2 blocks: [[Dtt2, A], [A.T, H2]]
    @property
    def Dtt2(self) -> np.ndarray:
        return self.D2[: self.p, : self.p]

    @property
    def A(self) -> np.ndarray:
        return self.D2[: self.p, self.p :]

    @property
    def H2(self) -> np.ndarray:
        return self.D2[self.p :, self.p :]

    # V2 blocks: [[Vtt2, B], [B.T, Q2]]
    @property
    def Vtt2(self) -> np.ndarray:
        return self.V2[: self.p, : self.p]

    @property
    def B(self) -> np.ndarray:
        return self.V2[: self.p, self.p :]

    @property
    def Q2(self) -> np.ndarray:
        return self.V2[self.p :, self.p :]


def schur_target(info: BlockInfoPair) -> np.ndarray:
    """Efficient-information matrix: Schur complement of the nuisance block.

    Returns Dtt^2 - A H^-2 A^T (p x p).  With an empty nuisance block
    (p1 = 0) this is Dtt^2 itself.
    """
    if info.p1 == 0:
        return info.Dtt2.copy()
    H2 = info.H2
    w = np.linalg.eigvalsh(H2)
    lam_max = float(np.max(np.abs(w)))
    if float(np.min(w)) <= RANK_RTOL * lam_max:
        raise NumericalRankError(
            "nuisance block H2 is numerically rank deficient "
            f"(min eigenvalue {np.min(w):.3e}, spectral norm {lam_max:.3e})"
        )
    S = info.Dtt2 - info.A @ sym_solve(H2, info.A.T, name="nuisance block H2")
    return 0.5 * (S + S.T)


def efficient_score(info: BlockInfoPair, grad):
    """Efficient score and its normalized version at the split of ``info``.

    score = grad_theta - A H^-2 grad_eta
    xi    = (Dtt^2 - A H^-2 A^T)^{-1/2} score   (symmetric PSD root)
    """
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != (info.p_star,):
        raise ValueError(f"gradient must have length {info.p_star}")
    g_t, g_e = g[: info.p], g[info.p :]
    if info.p1 == 0:
        score = g_t.copy()
    else:
        score = g_t - info.A @ sym_solve(info.H2, g_e, name="nuisance block H2")
    Dbr2 = schur_target(info)
    xi = sym_inv_sqrt(Dbr2, name="efficient information") @ score
    return score, xi


def identifiability_report(info: BlockInfoPair):
    """Smallest valid identifiability constants for condition (I).

    Returns (a_theta, a_eta, a_full, nu_hat) where a_block^2 is the
    spectral norm of Dblock^{-1/2} Vblock Dblock^{-1/2} and nu_hat is
    the target/nuisance angle norm ||Dtt^{-1} A H^{-2} A^T Dtt^{-1}||_inf
    with Dtt^{-1} the inverse symmetric root of Dtt^2.  The caller
    checks nu_hat < 1.
    """
    Dtt_is = sym_inv_sqrt(info.Dtt2, name="target block Dtt2")
    a_theta = float(np.sqrt(spectral_norm(Dtt_is @ info.Vtt2 @ Dtt_is)))
    D_is = sym_inv_sqrt(info.D2, name="full information D2")
    a_full = float(np.sqrt(spectral_norm(D_is @ info.V2 @ D_is)))
    if info.p1 == 0:
        return a_theta, 0.0, a_full, 0.0
    H_is = sym_inv_sqrt(info.H2, name="nuisance block H2")
    a_eta = float(np.sqrt(spectral_norm(H_is @ info.Q2 @ H_is)))
    M = info.A @ sym_solve(info.H2, info.A.T, name="nuisance block H2")
    nu_hat = spectral_norm(Dtt_is @ M @ Dtt_is)
    return a_theta, a_eta, a_full, float(nu_hat)
