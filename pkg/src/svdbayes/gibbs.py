"""Fixed- and variable-rank Gibbs samplers for the low-rank mean model.

The data model is Y = U D V' + E with orthonormal-column U, V, normal
singular values and iid normal noise. Rank moves flip per-column
activity bits using marginal odds computed by the activation series;
within-rank moves resample columns from their vMF and normal full
conditionals.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .diagnostics import effective_sample_size, geweke_z
from .errors import DegenerateChainError, NumericalError, UndefinedOddsError
from .linalg import as_matrix, null_basis, svd
from .samplers import (RandomSource, sample_d_mixture, sample_joint_uv,
                       sample_vmf, sample_vmf_sign)
from .specfun import SeriesCoefficients, bilinear_series_coeffs, log_series_sum

PRIOR_MODE_FLOOR = 1e-6


def uniform_rank_prior(n: int) -> np.ndarray:
    return np.full(n + 1, 1.0 / (n + 1))


def degenerate_rank_prior(n: int, k: int) -> np.ndarray:
    if not 0 <= k <= n:
        raise ValueError(f"rank {k} outside 0..{n}")
    prior = np.zeros(n + 1)
    prior[k] = 1.0
    return prior


def detectability_scale(m: int, n: int) -> float:
    """Magnitude of the largest singular value of m x n standard noise."""
    return math.sqrt(n + m + 2.0 * math.sqrt(n * m))


@dataclass
class PriorConfig:
    """Hyperparameters of the conjugate prior family.

    ``rank_prior`` is a probability vector over ranks 0..n. ``phi_fixed``
    and ``mu_psi_fixed`` pin the corresponding parameters instead of
    sampling them. ``mu_variance_scaled_by_psi`` switches the prior for
    the singular-value mean to normal(mu0, 1/psi); together with
    ``mu_mean_detectability`` it reproduces the diffuse and
    detectability-centered presets.
    """

    mu0: float
    v0_sq: float
    eta0: float
    tau0_sq: float
    nu0: float
    sigma0_sq: float
    rank_prior: np.ndarray
    phi_fixed: Optional[float] = None
    mu_psi_fixed: Optional[tuple] = None
    mu_variance_scaled_by_psi: bool = False
    mu_mean_detectability: bool = False

    def validate(self, n: int) -> None:
        for name in ("v0_sq", "eta0", "tau0_sq", "nu0", "sigma0_sq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        prior = np.asarray(self.rank_prior, dtype=float)
        if prior.shape != (n + 1,):
            raise ValueError(f"rank_prior must have length {n + 1}")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ValueError("rank_prior must be a probability vector")
        if self.phi_fixed is not None and self.phi_fixed <= 0:
            raise ValueError("phi_fixed must be > 0")
        if self.mu_psi_fixed is not None and self.mu_psi_fixed[1] <= 0:
            raise ValueError("fixed psi must be > 0")


@dataclass
class ChainConfig:
    iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    gibbs_refinements: int = 5
    series_rel_tol: float = 1e-10
    series_max_terms: int = 500
    scan_permute: bool = False

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class FactorState:
    """Sampler state: factors with per-column activity bits plus scalars."""

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    s: np.ndarray
    phi: float
    mu: float
    psi: float

    @classmethod
    def empty(cls, m: int, n: int, phi: float, mu: float, psi: float):
        return cls(u=np.zeros((m, n)), d=np.zeros(n), v=np.zeros((n, n)),
                   s=np.zeros(n, dtype=int), phi=phi, mu=mu, psi=psi)

    @property
    def k(self) -> int:
        return int(self.s.sum())

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.s)

    def mean_matrix(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T

    def deactivate(self, j: int) -> None:
        self.s[j] = 0
        self.d[j] = 0.0
        self.u[:, j] = 0.0
        self.v[:, j] = 0.0


@dataclass
class ChainSummary:
    rank_histogram: np.ndarray
    m_mean: np.ndarray
    samples: list
    diagnostics: dict
    seed: int = 0

    @property
    def rank_posterior(self) -> np.ndarray:
        total = self.rank_histogram.sum()
        return self.rank_histogram / total

    @property
    def mode_rank(self) -> int:
        return int(np.argmax(self.rank_histogram))

    def scalar_chain(self, name: str) -> np.ndarray:
        return np.array([rec[name] for rec in self.samples], dtype=float)


# ---------------------------------------------------------------------------
# full-conditional updates
# ---------------------------------------------------------------------------

def residual_minus_j(state: FactorState, y: np.ndarray, j: int) -> np.ndarray:
    """Y minus the mean contribution of every column except j."""
    e = y - state.mean_matrix()
    if state.s[j]:
        e += state.d[j] * np.outer(state.u[:, j], state.v[:, j])
    return e


def _null_excluding(mat: np.ndarray, s: np.ndarray, j: int) -> np.ndarray:
    cols = [i for i in np.flatnonzero(s) if i != j]
    return null_basis(mat[:, cols])


def sample_u_column(state: FactorState, y: np.ndarray, j: int,
                    src: RandomSource) -> np.ndarray:
    if not state.s[j]:
        raise ValueError(f"column {j} is inactive")
    e = residual_minus_j(state, y, j)
    basis = _null_excluding(state.u, state.s, j)
    theta = state.phi * state.d[j] * (basis.T @ (e @ state.v[:, j]))
    if theta.size >= 2:
        low = sample_vmf(src, theta)
    else:
        low = np.array([sample_vmf_sign(src, float(theta[0]))])
    state.u[:, j] = basis @ low
    return state.u[:, j]


def sample_v_column(state: FactorState, y: np.ndarray, j: int,
                    src: RandomSource) -> np.ndarray:
    if not state.s[j]:
        raise ValueError(f"column {j} is inactive")
    e = residual_minus_j(state, y, j)
    basis = _null_excluding(state.v, state.s, j)
    theta = state.phi * state.d[j] * (basis.T @ (e.T @ state.u[:, j]))
    if theta.size >= 2:
        low = sample_vmf(src, theta)
    else:
        low = np.array([sample_vmf_sign(src, float(theta[0]))])
    state.v[:, j] = basis @ low
    return state.v[:, j]


def sample_d_fixed(state: FactorState, y: np.ndarray, j: int,
                   src: RandomSource) -> float:
    if not state.s[j]:
        raise ValueError(f"column {j} is inactive")
    e = residual_minus_j(state, y, j)
    cross = float(state.u[:, j] @ e @ state.v[:, j])
    precision = state.phi + state.psi
    mean = (cross * state.phi + state.mu * state.psi) / precision
    state.d[j] = mean + src.gen.standard_normal() / math.sqrt(precision)
    return state.d[j]


def _mu_prior_mean(priors: PriorConfig, phi: float, m: int, n: int) -> float:
    if priors.mu_mean_detectability:
        return detectability_scale(m, n) / math.sqrt(phi)
    return priors.mu0


def sample_phi_mu_psi(state: FactorState, y: np.ndarray, priors: PriorConfig,
                      src: RandomSource) -> tuple:
    gen = src.gen
    m, n = y.shape
    if priors.phi_fixed is not None:
        state.phi = priors.phi_fixed
    else:
        resid = y - state.mean_matrix()
        shape = 0.5 * (priors.nu0 + m * n)
        rate = 0.5 * (priors.nu0 * priors.sigma0_sq + float(np.sum(resid * resid)))
        state.phi = gen.gamma(shape, 1.0 / rate)

    if priors.mu_psi_fixed is not None:
        state.mu, state.psi = priors.mu_psi_fixed
        return state.phi, state.mu, state.psi

    active = state.active()
    k = active.size
    d_active = state.d[active]
    d_sum = float(d_active.sum())
    if priors.mu_variance_scaled_by_psi:
        m0 = _mu_prior_mean(priors, state.phi, m, n)
        precision = state.psi * (k + 1)
        mean = (d_sum + m0) / (k + 1)
        state.mu = mean + gen.standard_normal() / math.sqrt(precision)
        shape = 0.5 * (priors.eta0 + k + 1)
        rate = 0.5 * (priors.eta0 * priors.tau0_sq
                      + float(np.sum((d_active - state.mu) ** 2))
                      + (state.mu - m0) ** 2)
    else:
        precision = state.psi * k + 1.0 / priors.v0_sq
        mean = (state.psi * d_sum + priors.mu0 / priors.v0_sq) / precision
        state.mu = mean + gen.standard_normal() / math.sqrt(precision)
        shape = 0.5 * (priors.eta0 + k)
        rate = 0.5 * (priors.eta0 * priors.tau0_sq
                      + float(np.sum((d_active - state.mu) ** 2)))
    state.psi = gen.gamma(shape, 1.0 / rate)
    return state.phi, state.mu, state.psi


# ---------------------------------------------------------------------------
# activation odds
# ---------------------------------------------------------------------------

def conditional_prior_odds_active(rank_prior: np.ndarray, k_minus: int,
                                  n: int) -> float:
    """Prior conditional odds that one more column is active given k_minus."""
    rank_prior = np.asarray(rank_prior, dtype=float)
    if not 0 <= k_minus <= n - 1:
        raise ValueError(f"k_minus must be in 0..{n - 1}")
    p_lo = rank_prior[k_minus]
    p_hi = rank_prior[k_minus + 1]
    if p_lo == 0.0 and p_hi == 0.0:
        raise UndefinedOddsError(
            f"rank prior gives zero mass to both K={k_minus} and K={k_minus + 1}")
    if p_lo == 0.0:
        return math.inf
    # binomial-coefficient ratio C(n,k)/C(n,k+1) = (k+1)/(n-k)
    return (p_hi / p_lo) * (k_minus + 1) / (n - k_minus)


@dataclass
class ActivationOdds:
    odds: float
    log_odds: float
    log_bayes_factor: float
    prior_odds: float
    coeffs: SeriesCoefficients
    e_norm_sq: float
    basis_u: np.ndarray
    basis_v: np.ndarray
    etilde: np.ndarray


def odds_dj_nonzero(state: FactorState, y: np.ndarray, j: int,
                    priors: PriorConfig, series_rel_tol: float = 1e-10,
                    series_max_terms: int = 500,
                    rank_count: Optional[int] = None,
                    prior_odds: Optional[float] = None) -> ActivationOdds:
    """Posterior odds that column j is active, marginal over its triple.

    Column j is treated as inactive; the Bayes factor comes from the
    activation series of the projected residual. The returned coefficient
    table is reused to draw the singular value when activation succeeds.
    """
    m, n = y.shape
    k_minus = state.k - int(state.s[j])
    if prior_odds is None:
        prior_odds = conditional_prior_odds_active(
            priors.rank_prior, k_minus, n if rank_count is None else rank_count)
    e = residual_minus_j(state, y, j)
    basis_u = _null_excluding(state.u, state.s, j)
    basis_v = _null_excluding(state.v, state.s, j)
    etilde = basis_u.T @ e @ basis_v
    sq_sv = np.linalg.svd(etilde, compute_uv=False) ** 2
    coeffs = bilinear_series_coeffs(sq_sv, m - k_minus, n - k_minus,
                                    state.phi, state.mu, state.psi,
                                    rel_tol=series_rel_tol,
                                    max_terms=series_max_terms)
    e_norm_sq = float(sq_sv.sum())
    log_bf = log_series_sum(coeffs, e_norm_sq)
    if prior_odds == 0.0:
        log_odds = -math.inf
    elif math.isinf(prior_odds):
        log_odds = math.inf
    else:
        log_odds = math.log(prior_odds) + log_bf
    odds = math.exp(log_odds) if log_odds < 700 else math.inf
    return ActivationOdds(odds, log_odds, log_bf, prior_odds, coeffs,
                          e_norm_sq, basis_u, basis_v, etilde)


def _activate_column(state: FactorState, j: int, res: ActivationOdds,
                     src: RandomSource, gibbs_refinements: int) -> None:
    d_new = sample_d_mixture(src, res.coeffs, res.e_norm_sq,
                             state.phi, state.mu, state.psi)
    a_mat = state.phi * d_new * res.etilde
    u_low, v_low = sample_joint_uv(src, a_mat, gibbs_refinements)
    state.s[j] = 1
    state.d[j] = d_new
    state.u[:, j] = res.basis_u @ u_low
    state.v[:, j] = res.basis_v @ v_low


def gibbs_step_variable(state: FactorState, y: np.ndarray, priors: PriorConfig,
                        src: RandomSource, cfg: ChainConfig,
                        columns: Optional[np.ndarray] = None,
                        rank_count: Optional[int] = None,
                        skip_u: tuple = (), skip_v: tuple = ()) -> FactorState:
    """One scan: activity flips per column, then within-rank refresh.

    ``columns`` restricts the activity pass (used by the bilinear model to
    keep pinned columns always active); ``skip_u``/``skip_v`` name columns
    whose direction on that side is pinned and never resampled.
    """
    n = y.shape[1]
    cols = np.arange(n) if columns is None else np.asarray(columns)
    n_free = cols.size if rank_count is None else rank_count
    if cfg.scan_permute:
        cols = src.gen.permutation(cols)

    free_set = set(int(c) for c in cols)
    for j in cols:
        j = int(j)
        k_minus_free = sum(1 for i in free_set if state.s[i] and i != j)
        prior_odds = conditional_prior_odds_active(
            priors.rank_prior, k_minus_free, n_free)
        if prior_odds == 0.0:
            state.deactivate(j)
            continue
        res = odds_dj_nonzero(state, y, j, priors, cfg.series_rel_tol,
                              cfg.series_max_terms, rank_count=n_free,
                              prior_odds=prior_odds)
        if math.isinf(res.log_odds) or src.gen.random() < expit(res.log_odds):
            _activate_column(state, j, res, src, cfg.gibbs_refinements)
        else:
            state.deactivate(j)

    for j in state.active():
        j = int(j)
        if j not in skip_u:
            sample_u_column(state, y, j, src)
        if j not in skip_v:
            sample_v_column(state, y, j, src)
        sample_d_fixed(state, y, j, src)

    sample_phi_mu_psi(state, y, priors, src)
    return state


# ---------------------------------------------------------------------------
# empirical-Bayes hyperparameters and prior presets
# ---------------------------------------------------------------------------

def empirical_bayes_hyperparams(y) -> tuple:
    """Rank-averaged plug-in estimates (sigma0_sq, mu0, v0_sq, tau0_sq).

    Rank-k least-squares fits give per-rank noise and singular-value
    summaries which are then averaged over k = 0..n; degenerate zero
    variances are floored to keep the conjugate conditionals proper.
    """
    y = as_matrix(y)
    m, n = y.shape
    if m < n:
        raise ValueError("requires m >= n; transpose the input")
    dvals = svd(y).d
    total_sq = float(np.sum(dvals ** 2))
    sigma_k = np.empty(n + 1)
    mu_k = np.empty(n + 1)
    tau_k = np.empty(n + 1)
    for k in range(n + 1):
        head = dvals[:k]
        sigma_k[k] = (total_sq - float(np.sum(head ** 2))) / (n * m)
        mu_k[k] = head.mean() if k else 0.0
        tau_k[k] = head.var() if k else 0.0
    sigma0_sq = float(sigma_k.mean())
    mu0 = float(mu_k.mean())
    v0_sq = float(mu_k.var(ddof=1))
    tau0_sq = float(tau_k.mean())
    msq = float(np.mean(y * y))
    floor = 1e-8 * msq if msq > 0 else 1e-8
    sigma0_sq = max(sigma0_sq, floor)
    v0_sq = max(v0_sq, floor)
    tau0_sq = max(tau0_sq, floor)
    return sigma0_sq, mu0, v0_sq, tau0_sq


def prior_empirical_bayes(y, rank_prior: Optional[np.ndarray] = None,
                          nu0: float = 2.0, eta0: float = 2.0) -> PriorConfig:
    y = as_matrix(y)
    if y.shape[0] < y.shape[1]:
        y = y.T
    sigma0_sq, mu0, v0_sq, tau0_sq = empirical_bayes_hyperparams(y)
    n = y.shape[1]
    return PriorConfig(mu0=mu0, v0_sq=v0_sq, eta0=eta0, tau0_sq=tau0_sq,
                       nu0=nu0, sigma0_sq=sigma0_sq,
                       rank_prior=uniform_rank_prior(n) if rank_prior is None
                       else np.asarray(rank_prior, dtype=float))


def prior_diffuse(n: int, rank_prior: Optional[np.ndarray] = None) -> PriorConfig:
    """Exponential(1) priors for both precisions, mu ~ normal(0, 1/psi)."""
    return PriorConfig(mu0=0.0, v0_sq=1.0, eta0=2.0, tau0_sq=1.0,
                       nu0=2.0, sigma0_sq=1.0,
                       rank_prior=uniform_rank_prior(n) if rank_prior is None
                       else np.asarray(rank_prior, dtype=float),
                       mu_variance_scaled_by_psi=True)


def prior_detectability(m: int, n: int,
                        rank_prior: Optional[np.ndarray] = None) -> PriorConfig:
    """Diffuse preset with the mu prior centered at the noise cusp."""
    cfg = prior_diffuse(n, rank_prior)
    return replace(cfg, mu_mean_detectability=True)


def make_prior(preset: str, y) -> PriorConfig:
    y = as_matrix(y)
    m, n = y.shape
    if m < n:
        m, n = n, m
    if preset == "empirical-bayes":
        return prior_empirical_bayes(y)
    if preset == "diffuse":
        return prior_diffuse(n)
    if preset == "detectability":
        return prior_detectability(m, n)
    raise ValueError(f"unknown prior preset '{preset}'")


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------

def _gamma_mode(shape: float, rate: float) -> float:
    return max((shape - 1.0) / rate, PRIOR_MODE_FLOOR)


def initial_state(m: int, n: int, priors: PriorConfig) -> FactorState:
    if priors.phi_fixed is not None:
        phi = priors.phi_fixed
    else:
        phi = _gamma_mode(0.5 * priors.nu0, 0.5 * priors.nu0 * priors.sigma0_sq)
    if priors.mu_psi_fixed is not None:
        mu, psi = priors.mu_psi_fixed
    else:
        psi = _gamma_mode(0.5 * priors.eta0, 0.5 * priors.eta0 * priors.tau0_sq)
        mu = _mu_prior_mean(priors, phi, m, n)
    return FactorState.empty(m, n, phi, mu, psi)


def chain_diagnostics(samples: list, names=("phi", "mu", "psi", "K")) -> dict:
    out = {}
    for name in names:
        series = np.array([rec[name] for rec in samples], dtype=float)
        entry = {"geweke_z": None, "ess": None}
        if series.size >= 100:
            try:
                entry["geweke_z"] = geweke_z(series)
                entry["ess"] = effective_sample_size(series)
            except DegenerateChainError:
                pass
        out[name] = entry
    return out


def run_chain(y, mask=None, priors: Optional[PriorConfig] = None,
              cfg: Optional[ChainConfig] = None) -> ChainSummary:
    """Run the variable-rank sampler and summarize the posterior.

    ``mask`` marks observed entries (True = observed); missing cells are
    re-imputed from the current fit at the start of every scan. The chain
    starts from rank zero with scalar parameters at their prior modes and
    is fully reproducible from ``cfg.seed``.
    """
    y = as_matrix(y)
    if cfg is None:
        raise ValueError("a ChainConfig is required")
    cfg.validate()
    transposed = y.shape[0] < y.shape[1]
    if transposed:
        y = y.T
        mask = None if mask is None else np.asarray(mask, dtype=bool).T
    m, n = y.shape
    if priors is None:
        priors = prior_empirical_bayes(y)
    priors.validate(n)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != y.shape:
            raise ValueError("mask shape must match the data")
        if not mask.any():
            raise ValueError("at least one entry must be observed")
        if mask.all():
            mask = None

    src = RandomSource(cfg.seed)
    state = initial_state(m, n, priors)
    y_work = y.copy()

    hist = np.zeros(n + 1, dtype=np.int64)
    m_accum = np.zeros((m, n))
    kept = 0
    samples = []
    for t in range(1, cfg.iterations + 1):
        if mask is not None:
            miss = ~mask
            current = state.mean_matrix()
            noise = src.gen.standard_normal(int(miss.sum()))
            y_work[miss] = current[miss] + noise / math.sqrt(state.phi)
        gibbs_step_variable(state, y_work, priors, src, cfg)
        if not (np.isfinite(state.d).all() and math.isfinite(state.phi)
                and math.isfinite(state.mu) and math.isfinite(state.psi)):
            raise NumericalError(f"non-finite sampler state at scan {t}")
        if t > cfg.burn_in:
            hist[state.k] += 1
            m_accum += state.mean_matrix()
            kept += 1
            if (t - cfg.burn_in) % cfg.thin == 0:
                samples.append({"scan": t, "K": state.k, "phi": state.phi,
                                "mu": state.mu, "psi": state.psi,
                                "d": state.d.copy()})

    m_mean = m_accum / kept
    if transposed:
        m_mean = m_mean.T
    return ChainSummary(rank_histogram=hist, m_mean=m_mean, samples=samples,
                        diagnostics=chain_diagnostics(samples), seed=cfg.seed)
