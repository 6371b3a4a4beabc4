"""Random-variate generators used by the samplers.

A :class:`RandomSource` wraps a seeded PCG64 generator; every function
here takes one as its first argument so chains replay exactly from a
seed. Parallel work splits sources by stream id rather than sharing one.
"""

import math

import numpy as np

from .errors import NumericalError, SamplerFailureError
from .linalg import null_basis

_T_DF = 5.0
_LOG_T_CONST = (math.lgamma(0.5 * (_T_DF + 1.0)) - math.lgamma(0.5 * _T_DF)
                - 0.5 * math.log(_T_DF * math.pi))


class RandomSource:
    """Seeded random generator with deterministic stream splitting."""

    def __init__(self, seed: int, stream: tuple = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, stream_id: int) -> "RandomSource":
        return RandomSource(self.seed, self.stream + (int(stream_id),))


def derive_seed(seed: int, *tags: int) -> int:
    """Deterministic 63-bit child seed for independent components."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def sample_sphere(src: RandomSource, p: int) -> np.ndarray:
    """Uniform draw from the unit sphere in R^p."""
    if p < 1:
        raise ValueError(f"dimension must be >= 1, got {p}")
    while True:
        z = src.gen.standard_normal(p)
        norm = math.sqrt(float(z @ z))
        if norm > 0.0:
            return z / norm


def sample_stiefel_sequential(src: RandomSource, m: int, k: int) -> np.ndarray:
    """Uniform m x k orthonormal matrix built one column at a time.

    Column j is a uniform draw from the sphere of the null space of the
    previous columns, mapped back through an orthonormal basis.
    """
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    u = np.zeros((m, k))
    u[:, 0] = sample_sphere(src, m)
    for j in range(1, k):
        basis = null_basis(u[:, :j])
        u[:, j] = basis @ sample_sphere(src, m - j)
    return u


def sample_vmf(src: RandomSource, theta: np.ndarray) -> np.ndarray:
    """Draw from the von Mises-Fisher density proportional to exp(u'theta).

    Uses the tangent-normal decomposition with Wood's rejection envelope
    for the cosine component; theta = 0 yields a uniform draw.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    if p < 2:
        raise ValueError(f"sample_vmf requires dimension >= 2, got {p}")
    kappa = math.sqrt(float(theta @ theta))
    if kappa == 0.0:
        return sample_sphere(src, p)
    mean_dir = theta / kappa
    d = p - 1.0
    b = d / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + d * d))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * math.log(1.0 - x0 * x0)
    gen = src.gen
    for _ in range(1_000_000):
        z = gen.beta(0.5 * d, 0.5 * d)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + d * math.log(1.0 - x0 * w) - c >= math.log(gen.random()):
            break
    else:
        raise SamplerFailureError("vMF cosine rejection exceeded proposal budget")
    # tangent direction orthogonal to the mean
    while True:
        v = gen.standard_normal(p)
        v -= (v @ mean_dir) * mean_dir
        norm = math.sqrt(float(v @ v))
        if norm > 1e-12:
            v /= norm
            break
    out = w * mean_dir + math.sqrt(max(0.0, 1.0 - w * w)) * v
    return out / math.sqrt(float(out @ out))


def sample_vmf_sign(src: RandomSource, theta: float) -> float:
    """Two-point analogue of the vMF draw on the 0-sphere {-1, +1}."""
    p_plus = 1.0 / (1.0 + math.exp(-2.0 * theta))
    return 1.0 if src.gen.random() < p_plus else -1.0


def _log_t_pdf(x, loc, scale):
    z = (x - loc) / scale
    return _LOG_T_CONST - 0.5 * (_T_DF + 1.0) * np.log1p(z * z / _T_DF) \
        - np.log(scale)


def sample_f_l(src: RandomSource, l: int, mu_tilde: float,
               psi_tilde: float) -> float:
    """Exact draw from the density proportional to d^{2l} exp(-(d-mu)^2 psi/2).

    l = 0 is plain normal; otherwise rejection sampling with a
    two-component shifted t proposal centered at the two stationary
    points of the log density (the target is bimodal for small mu).
    """
    if psi_tilde <= 0:
        raise ValueError("psi_tilde must be > 0")
    if l < 0:
        raise ValueError("order l must be >= 0")
    gen = src.gen
    if l == 0:
        return float(mu_tilde + gen.standard_normal() / math.sqrt(psi_tilde))

    disc = math.sqrt(mu_tilde * mu_tilde + 8.0 * l / psi_tilde)
    modes = np.array([0.5 * (mu_tilde + disc), 0.5 * (mu_tilde - disc)])
    scales = 1.0 / np.sqrt(2.0 * l / modes**2 + psi_tilde)

    def log_target(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return 2.0 * l * np.log(np.abs(x)) \
                - 0.5 * psi_tilde * (x - mu_tilde) ** 2

    logw = log_target(modes)
    logw -= max(logw)
    weights = np.exp(logw)
    weights /= weights.sum()

    def log_proposal(x):
        x = np.asarray(x, dtype=float)
        comp = np.stack([np.log(weights[i]) + _log_t_pdf(x, modes[i], scales[i])
                         for i in range(2)])
        mx = comp.max(axis=0)
        return mx + np.log(np.exp(comp - mx).sum(axis=0))

    grid = np.concatenate([modes[i] + np.linspace(-10, 10, 2001) * scales[i]
                           for i in range(2)])
    log_env = float(np.max(log_target(grid) - log_proposal(grid))) + math.log(1.3)

    for _ in range(1_000_000):
        comp = 0 if gen.random() < weights[0] else 1
        x = modes[comp] + scales[comp] * gen.standard_t(_T_DF)
        if math.log(gen.random()) < float(log_target(x) - log_proposal(x)) - log_env:
            return float(x)
    raise SamplerFailureError(f"rejection sampler for order {l} exceeded budget")


def sample_d_mixture(src: RandomSource, coeffs, e_norm_sq: float,
                     phi: float, mu: float, psi: float) -> float:
    """Draw a singular value from its activation-conditional mixture.

    Component l is chosen with probability proportional to
    |E|^{2l} a_l b_l, then the value comes from the order-l density with
    shrunk mean mu*psi/(phi+psi) and precision phi+psi.
    """
    from .specfun import log_mixture_weights

    logw = log_mixture_weights(coeffs, e_norm_sq)
    finite = np.isfinite(logw)
    if not finite.any():
        raise NumericalError("activation mixture has no finite weights")
    logw = logw - logw[finite].max()
    probs = np.where(finite, np.exp(logw), 0.0)
    total = probs.sum()
    if not math.isfinite(total) or total <= 0:
        raise NumericalError("activation mixture weights are degenerate")
    probs /= total
    l = int(np.searchsorted(np.cumsum(probs), src.gen.random()))
    l = min(l, probs.size - 1)
    psi_tilde = phi + psi
    mu_tilde = mu * psi / psi_tilde
    return sample_f_l(src, l, mu_tilde, psi_tilde)


def sample_joint_uv(src: RandomSource, a: np.ndarray,
                    gibbs_refinements: int = 5) -> tuple:
    """Approximate draw of dependent unit vectors with density prop. to exp(u'Av).

    Starts from one of the signed singular-vector pairs of A, picked with
    probability proportional to exp(singular value), then applies a few
    alternating exact conditional vMF draws u|v and v|u.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("A must be 2-dimensional")
    m, n = a.shape
    if m < n or n < 1:
        raise ValueError(f"need m >= n >= 1, got ({m}, {n})")
    gen = src.gen

    if not a.any():
        return sample_sphere(src, m), sample_sphere(src, n)

    left, sigma, right_t = np.linalg.svd(a, full_matrices=False)
    logits = sigma - sigma.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    k = int(np.searchsorted(np.cumsum(probs), gen.random()))
    k = min(k, n - 1)
    sign = 1.0 if gen.random() < 0.5 else -1.0
    u = sign * left[:, k]
    v = sign * right_t[k, :]

    for _ in range(gibbs_refinements):
        theta_u = a @ v
        if m >= 2:
            u = sample_vmf(src, theta_u)
        else:
            u = np.array([sample_vmf_sign(src, float(theta_u[0]))])
        theta_v = a.T @ u
        if n >= 2:
            v = sample_vmf(src, theta_v)
        else:
            v = np.array([sample_vmf_sign(src, float(theta_v[0]))])
    return u, v
