"""Chain diagnostics and frequentist rank baselines."""

import math

import numpy as np

from .errors import DegenerateChainError
from .linalg import as_matrix

MIN_CHAIN_LENGTH = 100


def _check_chain(chain) -> np.ndarray:
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1:
        raise ValueError("chain must be 1-dimensional")
    if x.size < MIN_CHAIN_LENGTH:
        raise ValueError(f"chain must have at least {MIN_CHAIN_LENGTH} values")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    return x


def _autocovariance(x: np.ndarray, lag: int) -> float:
    n = x.size
    xc = x - x.mean()
    return float(xc[: n - lag] @ xc[lag:]) / n


def _spectral_variance(x: np.ndarray) -> float:
    """Long-run variance via a Bartlett lag window of length sqrt(n)."""
    window = int(math.sqrt(x.size))
    s = _autocovariance(x, 0)
    for k in range(1, window):
        s += 2.0 * (1.0 - k / window) * _autocovariance(x, k)
    return max(s, 0.0)


def geweke_z(chain, first_frac: float = 0.1, last_frac: float = 0.5) -> float:
    """Stationarity z-score comparing early and late segment means.

    Segment mean variances use the spectral (long-run) variance so
    autocorrelation within segments is accounted for.
    """
    x = _check_chain(chain)
    n = x.size
    na = max(int(first_frac * n), 2)
    nb = max(int(last_frac * n), 2)
    xa, xb = x[:na], x[n - nb:]
    va, vb = _spectral_variance(xa), _spectral_variance(xb)
    denom = va / na + vb / nb
    if denom <= 0.0:
        raise DegenerateChainError("both segments have zero variance")
    return float((xa.mean() - xb.mean()) / math.sqrt(denom))


def effective_sample_size(chain) -> float:
    """N / (1 + 2 sum of initial positive autocorrelations), clipped to [1, N]."""
    x = _check_chain(chain)
    n = x.size
    g0 = _autocovariance(x, 0)
    if g0 <= 0.0:
        raise DegenerateChainError("chain has zero variance")
    rho_sum = 0.0
    for k in range(1, n):
        rho = _autocovariance(x, k) / g0
        if rho <= 0.0:
            break
        rho_sum += rho
    ess = n / (1.0 + 2.0 * rho_sum)
    return float(min(max(ess, 1.0), n))


def rank_baselines(y) -> tuple:
    """Two plug-in rank estimates: eigen-gap and correlation-eigenvalue counts.

    The gap estimate is the index of the largest gap in the eigenvalues of
    Y'Y (smallest index on ties); the correlation estimate counts
    eigenvalues of corr(Y) above 1, with zero-variance columns excluded.
    """
    y = as_matrix(y)
    n = y.shape[1]
    if n < 2:
        raise ValueError("need at least two columns")
    eig = np.linalg.svd(y, compute_uv=False) ** 2
    eig = np.sort(eig)[::-1]
    gaps = eig[:-1] - eig[1:]
    k_gap = int(np.argmax(gaps)) + 1

    stds = y.std(axis=0)
    valid = stds > 0
    k_corr = 0
    if valid.sum() >= 2:
        corr = np.corrcoef(y[:, valid], rowvar=False)
        vals = np.linalg.eigvalsh(corr)
        k_corr = int(np.sum(vals > 1.0 + 1e-10))
    return k_gap, k_corr


def ase(m_hat, m_true) -> float:
    """Average squared error between an estimate and the generating mean."""
    m_hat = as_matrix(m_hat, "m_hat")
    m_true = as_matrix(m_true, "m_true")
    if m_hat.shape != m_true.shape:
        raise ValueError(f"shape mismatch {m_hat.shape} vs {m_true.shape}")
    diff = m_hat - m_true
    return float(np.mean(diff * diff))


def ase_ratio(m_bayes, m_ls, m_true) -> float:
    return ase(m_bayes, m_true) / ase(m_ls, m_true)
