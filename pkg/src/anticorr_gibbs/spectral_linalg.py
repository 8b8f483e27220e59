"""Dense linear algebra helpers: spectral bounds, full SVD, guarded Cholesky."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DefinitenessError, InvalidInputError, NumericError

POWER_SAFETY = 1.01
POWER_TOL = 1e-8
POWER_MAX_ITER = 500


def _as_symmetric(m, rtol=1e-12):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    if np.abs(m - m.T).max(initial=0.0) > rtol * scale:
        raise InvalidInputError("matrix is not symmetric")
    return m


def frobenius_bound(m):
    """Frobenius norm of ``m``; always an upper bound on the spectral norm."""
    m = _as_symmetric(m)
    return float(np.sqrt(np.sum(m * m)))


def spectral_upper_bound(m, tol=POWER_TOL, max_iter=POWER_MAX_ITER,
                         safety=POWER_SAFETY):
    """Cheap over-estimate of the spectral norm of a symmetric matrix.

    Power iteration is run on ``m @ m`` so that negative eigenvalues are
    handled, and the converged estimate is inflated by ``safety``. The result
    never exceeds the Frobenius norm; if the iteration does not settle within
    ``max_iter`` steps the Frobenius norm itself is returned.

    Parameters
    ----------
    m : (p, p) array_like
        Symmetric matrix.
    tol : float
        Relative change in the eigenvalue estimate that counts as converged.
    max_iter : int
        Iteration cap before falling back to the Frobenius bound.
    safety : float
        Multiplicative inflation applied to the power-iteration estimate.

    Returns
    -------
    float
    """
    m = _as_symmetric(m)
    frob = float(np.sqrt(np.sum(m * m)))
    if frob == 0.0:
        return 0.0
    p = m.shape[0]
    # fixed start vector keeps the function pure
    v = np.random.default_rng(0x5EED).standard_normal(p)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = m @ (m @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        new_est = np.sqrt(nrm)
        v = w / nrm
        if abs(new_est - est) <= tol * new_est:
            return min(safety * new_est, frob)
        est = new_est
    return frob


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD of an ``n x p`` design matrix.

    ``u`` is always ``n x n`` orthogonal. With ``k = min(n, p)``,
    ``singular_values`` has length ``k``, ``v`` is ``p x k`` and
    ``v_complement`` is ``p x (p - k)`` so that ``[v, v_complement]`` is
    orthogonal. Only the first ``k`` columns of ``u`` pair with ``v``.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray
    v_complement: np.ndarray
    n: int
    p: int

    @property
    def k(self):
        return self.singular_values.shape[0]

    @property
    def largest(self):
        return float(self.singular_values[0]) if self.k else 0.0

    def reconstruct(self):
        return (self.u[:, :self.k] * self.singular_values) @ self.v.T


def full_svd(x):
    """Full SVD with the orthogonal completion of the right factor."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("matrix has non-finite entries")
    n, p = x.shape
    try:
        u, s, vt = np.linalg.svd(x, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "SVD failed to converge",
            diagnostics={"shape": (n, p), "frobenius": float(np.linalg.norm(x))},
        ) from exc
    k = min(n, p)
    return SvdFactors(u=u, singular_values=s[:k], v=vt[:k].T.copy(),
                      v_complement=vt[k:].T.copy(), n=n, p=p)


def cholesky_psd(m, jitter_start=0.0, max_jitter=None):
    """Cholesky factor of ``m + jitter * I`` with escalating jitter.

    Jitter starts at ``jitter_start`` and grows by factors of ten up to
    ``max_jitter`` (default ``1e-6 * trace(m) / dim``). Pass ``max_jitter=0``
    to demand an exact factorization.

    Returns
    -------
    L : ndarray
        Lower-triangular factor.
    jitter : float
        Jitter that was actually applied.
    """
    m = _as_symmetric(m)
    dim = m.shape[0]
    if max_jitter is None:
        max_jitter = 1e-6 * max(np.trace(m), 0.0) / dim
    jitter = float(jitter_start)
    eye = np.eye(dim)
    first_step = max(max_jitter * 1e-6, np.finfo(float).tiny)
    while True:
        try:
            return np.linalg.cholesky(m + jitter * eye), jitter
        except np.linalg.LinAlgError:
            pass
        if jitter >= max_jitter:
            break
        jitter = min(max(10.0 * jitter, first_step), max_jitter)
    raise DefinitenessError(
        f"matrix is not positive definite (jitter up to {max_jitter:.3g} tried)",
        diagnostics={"max_jitter": max_jitter, "dim": dim},
    )
