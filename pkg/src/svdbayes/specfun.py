"""Special functions and the activation-series machinery.

Everything here is evaluated in log space: the series that drive the
variable-rank sampler involve terms like ``|E|^{2l} a_l b_l`` whose
magnitudes span hundreds of orders, so coefficients are carried as logs
and accumulated with log-sum-exp.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ive

from .errors import TruncationError
from .linalg import as_matrix

LOG4 = math.log(4.0)
_NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# scalar special functions
# ---------------------------------------------------------------------------

def log_bessel_i(order: float, arg: float) -> float:
    """log I_nu(x) for nu >= 0, x >= 0, overflow-safe for large x."""
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if arg < 0:
        raise ValueError(f"argument must be >= 0, got {arg}")
    if arg == 0.0:
        return 0.0 if order == 0.0 else _NEG_INF
    scaled = float(ive(order, arg))
    if scaled > 0.0 and math.isfinite(scaled):
        return math.log(scaled) + arg
    # ive underflows when (x/2)^nu / Gamma(nu+1) is tiny; fall back to the
    # leading terms of the ascending series.
    q = 0.25 * arg * arg
    correction = q / (order + 1.0) * (1.0 + q / (2.0 * (order + 2.0)))
    return order * math.log(0.5 * arg) - math.lgamma(order + 1.0) + math.log1p(correction)


def log_vmf_const(dim: int, kappa: float) -> float:
    """Log normalizing constant c_p(kappa) of the von Mises-Fisher density."""
    if dim < 2:
        raise ValueError(f"sphere embedding dimension must be >= 2, got {dim}")
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    p = float(dim)
    if kappa == 0.0:
        return math.lgamma(p / 2.0) - math.log(2.0) - (p / 2.0) * math.log(math.pi)
    nu = p / 2.0 - 1.0
    return (-(p / 2.0) * math.log(2.0 * math.pi)
            + nu * math.log(kappa)
            - log_bessel_i(nu, kappa))


def normal_even_moments(mean: float, variance: float, max_order: int) -> np.ndarray:
    """Even raw moments E[X^{2l}], l = 0..max_order, of a normal variable.

    Uses the recursion M_k = mean*M_{k-1} + (k-1)*variance*M_{k-2}.
    """
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    out = np.empty(max_order + 1)
    out[0] = 1.0
    prev2, prev1 = 1.0, mean
    for k in range(2, 2 * max_order + 1):
        cur = mean * prev1 + (k - 1) * variance * prev2
        prev2, prev1 = prev1, cur
        if k % 2 == 0:
            out[k // 2] = cur
    return out


# ---------------------------------------------------------------------------
# log-space moment engines
# ---------------------------------------------------------------------------

_LGAMMA_CACHE: dict = {}


def _lgamma_seq(x0: float, count: int) -> np.ndarray:
    """Cached lgamma(x0 + l) for l = 0..count-1."""
    arr = _LGAMMA_CACHE.get(x0)
    if arr is None or arr.size < count:
        size = max(count, 256)
        if arr is not None:
            size = max(size, 2 * arr.size)
        arr = gammaln(x0 + np.arange(size))
        _LGAMMA_CACHE[x0] = arr
    return arr[:count]


def _lse2(a: float, b: float) -> float:
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


class _LogDirichletMoments:
    """Incremental log E[(lam' q)^l] for q ~ Dirichlet(alpha).

    The recursion expresses moment l+1 as a convolution of lower moments
    with power sums of lam, so extension is O(L^2) overall.
    """

    def __init__(self, lam, alpha):
        lam = np.asarray(lam, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("lam must be a non-empty 1-d array")
        if alpha.shape != lam.shape:
            raise ValueError("alpha must match lam in length")
        if np.any(alpha <= 0):
            raise ValueError("all Dirichlet parameters must be > 0")
        if np.any(lam < 0):
            raise ValueError("lam entries must be >= 0")
        self._a0 = float(alpha.sum())
        self._lmax = float(lam.max())
        self._log_alpha = np.log(alpha)
        if self._lmax > 0:
            with np.errstate(divide="ignore"):
                self._log_ratio = np.log(lam / self._lmax)
        else:
            self._log_ratio = None
        self._log_r = [0.0]          # log E[(lam'q)^l]
        self._s = [gammaln(self._a0)]  # log R_l + lgamma(a0+l) - lgamma(l+1)
        self._log_p = np.empty(0)    # log power sums, index p-1

    def _extend_power_sums(self, upto: int) -> None:
        have = self._log_p.size
        if have >= upto:
            return
        p = np.arange(have + 1, upto + 1, dtype=float)
        mat = self._log_alpha[None, :] + p[:, None] * self._log_ratio[None, :]
        mmax = mat.max(axis=1)
        fresh = (p * math.log(self._lmax) + mmax
                 + np.log(np.exp(mat - mmax[:, None]).sum(axis=1)))
        self._log_p = np.concatenate([self._log_p, fresh])

    def extend(self, upto: int) -> None:
        """Make moments 0..upto available."""
        if self._lmax == 0.0 or len(self._log_r) > upto:
            return
        self._extend_power_sums(upto)
        lg_a0 = _lgamma_seq(self._a0, upto + 2)
        lg_int = _lgamma_seq(1.0, upto + 2)
        log_p = self._log_p
        s = self._s
        for k in range(len(self._log_r) - 1, upto):
            v = np.asarray(s) + log_p[k::-1]
            mx = float(v.max())
            if mx == _NEG_INF:
                log_next = _NEG_INF
            else:
                log_next = (lg_int[k] - lg_a0[k + 1] + mx
                            + math.log(np.exp(v - mx).sum()))
            self._log_r.append(log_next)
            s.append(log_next + lg_a0[k + 1] - lg_int[k + 1])

    def log_moment(self, l: int) -> float:
        if self._lmax == 0.0:
            return 0.0 if l == 0 else _NEG_INF
        self.extend(l)
        return self._log_r[l]

    def log_moments(self, upto: int) -> np.ndarray:
        if self._lmax == 0.0:
            out = np.full(upto + 1, _NEG_INF)
            out[0] = 0.0
            return out
        self.extend(upto)
        return np.asarray(self._log_r[: upto + 1])


class _LogNormalEvenMoments:
    """Incremental log E[D^{2l}] for D ~ normal(mean, variance).

    Even moments depend on |mean| only, which keeps every raw moment of
    the recursion positive and log-representable.
    """

    def __init__(self, mean: float, variance: float):
        if variance <= 0:
            raise ValueError("variance must be > 0")
        self._log_mu = math.log(abs(mean)) if mean != 0.0 else _NEG_INF
        self._log_var = math.log(variance)
        self._raw = [0.0, self._log_mu]  # log raw moments of |mean| version

    def log_even(self, l: int) -> float:
        raw = self._raw
        while len(raw) <= 2 * l:
            k = len(raw)
            val = _lse2(self._log_mu + raw[k - 1],
                        math.log(k - 1) + self._log_var + raw[k - 2])
            raw.append(val)
        return raw[2 * l]


_NORM_ENGINE_CACHE: dict = {}


def _norm_engine(mean: float, variance: float) -> _LogNormalEvenMoments:
    key = (mean, variance)
    eng = _NORM_ENGINE_CACHE.get(key)
    if eng is None:
        if len(_NORM_ENGINE_CACHE) >= 16:
            _NORM_ENGINE_CACHE.pop(next(iter(_NORM_ENGINE_CACHE)))
        eng = _LogNormalEvenMoments(mean, variance)
        _NORM_ENGINE_CACHE[key] = eng
    return eng


def dirichlet_avg_moments(lam, alpha, max_order: int) -> np.ndarray:
    """Moments E[(lam' q)^l], l = 0..max_order, for q ~ Dirichlet(alpha)."""
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    eng = _LogDirichletMoments(lam, alpha)
    return np.exp(eng.log_moments(max_order))


# ---------------------------------------------------------------------------
# bilinear-form expectation series
# ---------------------------------------------------------------------------

def _log_c(l: int, half_m: float) -> float:
    # log of Gamma(m/2) / (Gamma(m/2 + l) Gamma(1 + l) 4^l)
    return (math.lgamma(half_m) - math.lgamma(half_m + l)
            - math.lgamma(1.0 + l) - l * LOG4)


def _log_c_array(upto: int, half_m: float) -> np.ndarray:
    ls = np.arange(upto + 1)
    lg_m = _lgamma_seq(half_m, upto + 1)
    lg_int = _lgamma_seq(1.0, upto + 1)
    return lg_m[0] - lg_m - lg_int - ls * LOG4


@dataclass
class SeriesCoefficients:
    """Truncated activation-series coefficients on the log scale.

    ``log_a[l]`` and ``log_b[l]`` cover orders 0..order. ``tail_low`` and
    ``tail_high`` bound the omitted mass of the weighted series
    sum_l |E|^{2l} a_l b_l relative to the retained partial sum.
    """

    log_a: np.ndarray
    log_b: np.ndarray
    order: int
    tail_low: float
    tail_high: float


def log_mixture_weights(coeffs: SeriesCoefficients, e_norm_sq: float) -> np.ndarray:
    """Unnormalized log weights |E|^{2l} a_l b_l of the activation series."""
    if e_norm_sq < 0:
        raise ValueError("e_norm_sq must be >= 0")
    logw = coeffs.log_a + coeffs.log_b
    if e_norm_sq > 0:
        logw = logw + np.arange(coeffs.order + 1) * math.log(e_norm_sq)
    else:
        logw = logw.copy()
        logw[1:] = _NEG_INF
    return logw


def log_series_sum(coeffs: SeriesCoefficients, e_norm_sq: float) -> float:
    logw = log_mixture_weights(coeffs, e_norm_sq)
    mx = float(logw.max())
    return mx + math.log(np.exp(logw - mx).sum())


def _moment_ratio_bound(l: int, abs_mu: float, var: float) -> float:
    # E[D^{2l+2}]/E[D^{2l}] <= ((|mu| + sqrt(mu^2 + 4(2l+1)var))/2)^2
    root = 0.5 * (abs_mu + math.sqrt(abs_mu * abs_mu + 4.0 * (2 * l + 1) * var))
    return root * root


def _weighted_tail_log_bounds(start: int, scale_lo: float, scale_hi: float,
                              half_m: float, log_b_const: float,
                              norm_eng: _LogNormalEvenMoments,
                              abs_mu_t: float, var_t: float,
                              stop_floor: float):
    """Log bounds on sum_{l >= start} scale^l c_l b0 E[D^{2l}].

    ``scale`` stands for lambda * phi^2 with lambda in [lam_min, lam_max].
    The upper continuation at scale_hi runs until the analytic term-ratio
    bound certifies a geometric remainder; the lower continuation at
    scale_lo is simply truncated (any partial sum is a valid lower bound).
    """
    log_hi = math.log(scale_hi) if scale_hi > 0 else _NEG_INF
    log_lo = math.log(scale_lo) if scale_lo > 0 else _NEG_INF
    acc_hi = _NEG_INF
    acc_lo = _NEG_INF
    if log_hi == _NEG_INF:
        return acc_lo, acc_hi, True
    l = start
    limit = start + 200_000
    while l < limit:
        log_cb = _log_c(l, half_m) + log_b_const + norm_eng.log_even(l)
        term_hi = l * log_hi + log_cb
        acc_hi = _lse2(acc_hi, term_hi)
        if log_lo != _NEG_INF:
            acc_lo = _lse2(acc_lo, l * log_lo + log_cb)
        ratio = (scale_hi * _moment_ratio_bound(l, abs_mu_t, var_t)
                 / (4.0 * (l + 1) * (half_m + l)))
        if ratio < 0.5 and term_hi < stop_floor:
            nxt = (scale_hi * _moment_ratio_bound(l + 1, abs_mu_t, var_t)
                   / (4.0 * (l + 2) * (half_m + l + 1)))
            if nxt <= ratio:
                acc_hi = _lse2(acc_hi, term_hi + math.log(ratio / (1.0 - ratio)))
                return acc_lo, acc_hi, True
        l += 1
    return acc_lo, acc_hi, False


def bilinear_series_coeffs(sq_singular_values, mtilde: int, ntilde: int,
                           phi: float, mu: float, psi: float,
                           rel_tol: float = 1e-10,
                           max_terms: int = 500) -> SeriesCoefficients:
    """Coefficients a_l, b_l of the activation series, adaptively truncated.

    ``sq_singular_values`` are the eigenvalues of E'E for the projected
    residual E (mtilde x ntilde, mtilde >= ntilde). a_l folds the
    Dirichlet average of the normalized eigenvalues together with the
    dimension factor Gamma(m/2)/(Gamma(m/2+l) Gamma(1+l) 4^l); b_l carries
    phi^{2l} times the even moments of the spike-conditional normal for
    the singular value. Truncation stops once the certified bound on the
    omitted weighted mass drops below ``rel_tol`` times the partial sum.
    """
    lam = np.asarray(sq_singular_values, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise ValueError("sq_singular_values must be a non-empty 1-d array")
    if np.any(lam < 0):
        raise ValueError("squared singular values must be >= 0")
    if mtilde < ntilde or ntilde < 1:
        raise ValueError(f"need mtilde >= ntilde >= 1, got ({mtilde}, {ntilde})")
    if lam.size != ntilde:
        raise ValueError("expected one squared singular value per ntilde column")
    if phi <= 0 or psi <= 0:
        raise ValueError("phi and psi must be > 0")
    if rel_tol <= 0:
        raise ValueError("rel_tol must be > 0")

    half_m = 0.5 * mtilde
    psi_t = phi + psi
    mu_t = mu * psi / psi_t
    var_t = 1.0 / psi_t
    log_b_const = 0.5 * (math.log(psi) - math.log(psi_t)) \
        - 0.5 * mu * mu * psi * phi / psi_t
    log_phi_sq = 2.0 * math.log(phi)
    norm_eng = _norm_engine(mu_t, var_t)

    lam_sum = float(lam.sum())
    if lam_sum == 0.0:
        return SeriesCoefficients(np.zeros(1), np.array([log_b_const]), 0, 0.0, 0.0)

    dir_eng = _LogDirichletMoments(lam / lam_sum, np.full(lam.size, 0.5))
    log_x = math.log(lam_sum)
    lam_lo = float(lam.min())
    lam_hi = float(lam.max())
    phi_sq = phi * phi

    log_a: list = []
    log_b: list = []
    log_t: list = []
    log_partial = _NEG_INF
    peak = _NEG_INF
    best_bound = math.inf
    next_attempt = 1

    for l in range(max_terms + 1):
        a_val = dir_eng.log_moment(l) + _log_c(l, half_m)
        b_val = l * log_phi_sq + log_b_const + norm_eng.log_even(l)
        log_a.append(a_val)
        log_b.append(b_val)
        t = l * log_x + a_val + b_val
        log_t.append(t)
        log_partial = _lse2(log_partial, t)
        peak = max(peak, t)
        past_peak = l >= 1 and t < log_t[l - 1] and t < peak
        if past_peak and t - log_partial < math.log(rel_tol / 8.0) and l >= next_attempt:
            stop_floor = log_partial + math.log(1e-18)
            acc_lo, acc_hi, certified = _weighted_tail_log_bounds(
                l + 1, lam_lo * phi_sq, lam_hi * phi_sq, half_m,
                log_b_const, norm_eng, abs(mu_t), var_t, stop_floor)
            if certified:
                rel_hi = math.exp(acc_hi - log_partial)
                best_bound = min(best_bound, rel_hi)
                if rel_hi < rel_tol:
                    rel_lo = math.exp(acc_lo - log_partial)
                    return SeriesCoefficients(np.asarray(log_a), np.asarray(log_b),
                                              l, rel_lo, rel_hi)
            next_attempt = l + 16
    raise TruncationError(
        f"activation series not certified within {max_terms} terms", best_bound)


# ---------------------------------------------------------------------------
# tail bounds and the pure bilinear expectation
# ---------------------------------------------------------------------------

def _log_diff_exp(a: float, b: float) -> float:
    """log(e^a - e^b) clipped at -inf when cancellation eats the difference."""
    if b >= a:
        return _NEG_INF
    return a + math.log1p(-math.exp(b - a))


def _log_tail_closed_form(lam: float, r: int, m: int) -> float:
    if lam == 0.0:
        return _NEG_INF
    half_m = 0.5 * m
    nu = half_m - 1.0
    root = math.sqrt(lam)
    log_full = (math.lgamma(half_m) + nu * (math.log(2.0) - math.log(root))
                + log_bessel_i(nu, root))
    ls = np.arange(r + 1)
    terms = ls * math.log(lam) + _log_c_array(r, half_m)
    mx = float(terms.max())
    log_partial = mx + math.log(np.exp(terms - mx).sum())
    return _log_diff_exp(log_full, log_partial)


def log_series_tail_bounds(lambda_min: float, lambda_max: float,
                           r: int, m: int) -> tuple:
    """Log-scale sandwich on the omitted mass sum_{l>r} E[(lam'q)^l] c_l."""
    if lambda_min < 0 or lambda_min > lambda_max:
        raise ValueError("need 0 <= lambda_min <= lambda_max")
    if r < 0:
        raise ValueError("order r must be >= 0")
    if m < 1:
        raise ValueError("dimension m must be >= 1")
    return (_log_tail_closed_form(lambda_min, r, m),
            _log_tail_closed_form(lambda_max, r, m))


def series_tail_bounds(lambda_min: float, lambda_max: float,
                       r: int, m: int) -> tuple:
    lo, hi = log_series_tail_bounds(lambda_min, lambda_max, r, m)
    return math.exp(lo), math.exp(hi)


@dataclass
class BilinearExpectation:
    """E[exp(u'Av)] with certified bounds, carried on the log scale."""

    log_value: float
    log_low: float
    log_high: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

    @property
    def low(self) -> float:
        return math.exp(self.log_low)

    @property
    def high(self) -> float:
        return math.exp(self.log_high)


def bilinear_expectation(a, rel_tol: float = 1e-10,
                         max_terms: int = 4000) -> BilinearExpectation:
    """Expectation of exp(u'Av) over independent uniform unit vectors.

    Evaluates the even-order series in the squared singular values of A
    and widens the partial sum by the closed-form tail sandwich; the
    returned interval has relative width below ``rel_tol``.
    """
    a = as_matrix(a, "A")
    if a.shape[0] < a.shape[1]:
        a = a.T
    m, n = a.shape
    if rel_tol <= 0:
        raise ValueError("rel_tol must be > 0")
    lam = np.linalg.svd(a, compute_uv=False) ** 2
    lam_sum = float(lam.sum())
    if lam_sum == 0.0:
        return BilinearExpectation(0.0, 0.0, 0.0)
    half_m = 0.5 * m
    dir_eng = _LogDirichletMoments(lam / lam_sum, np.full(n, 0.5))
    log_x = math.log(lam_sum)
    lam_lo = float(lam.min())
    lam_hi = float(lam.max())

    log_partial = _NEG_INF
    prev_t = math.inf
    best_bound = math.inf
    for l in range(max_terms + 1):
        t = l * log_x + dir_eng.log_moment(l) + _log_c(l, half_m)
        log_partial = _lse2(log_partial, t)
        if l >= 1 and t < prev_t and t - log_partial < math.log(rel_tol / 8.0):
            tail_lo, tail_hi = log_series_tail_bounds(lam_lo, lam_hi, l, m)
            rel_hi = math.exp(tail_hi - log_partial)
            best_bound = min(best_bound, rel_hi)
            if rel_hi < rel_tol:
                log_low = _lse2(log_partial, tail_lo)
                log_high = _lse2(log_partial, tail_hi)
                log_value = _lse2(log_low, log_high) - math.log(2.0)
                return BilinearExpectation(log_value, log_low, log_high)
        prev_t = t
    raise TruncationError(
        f"bilinear expectation series not certified within {max_terms} terms",
        best_bound)
