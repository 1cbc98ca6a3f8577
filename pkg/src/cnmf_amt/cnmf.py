"""Convolutive NMF under the generalized KL divergence.

Shapes follow one convention throughout: a spectrogram M is (n, m), templates
W are (n, tau, r) with W[f, i, q] the i-th frame of note q's template, and
activations H are (r, m). Activations are causal: H[:, t - i] is zero for
t - i < 0.

All updates are multiplicative, so entries that start at zero stay at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeValueError, ShapeError, UntrainableNoteError

EPS = 1e-12
WARM_START_ITERS = 10


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    epsilon: float = EPS
    rel_tol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be >= 0")


TRAIN_CONFIG = SolverConfig(max_iters=500)
TRANSCRIBE_CONFIG = SolverConfig(max_iters=100)


@dataclass
class FitTrace:
    cost_per_iteration: list[float] = field(default_factory=list)

    @property
    def iterations_run(self) -> int:
        return len(self.cost_per_iteration)

    @property
    def final_cost(self) -> float:
        return self.cost_per_iteration[-1] if self.cost_per_iteration else float("nan")

    def is_monotone(self, slack: float = 1e-9) -> bool:
        c = np.asarray(self.cost_per_iteration)
        return bool(np.all(c[1:] <= c[:-1] * (1 + slack)))


def _check_nonneg(name, a):
    if np.any(a < 0):
        raise NegativeValueError(f"{name} has negative entries")


def _check_shapes(M, W, H):
    if W.ndim != 3 or H.ndim != 2 or M.ndim != 2:
        raise ShapeError("expected M (n, m), W (n, tau, r), H (r, m)")
    n, _, r = W.shape
    if H.shape[0] != r:
        raise ShapeError(f"W has {r} templates but H has {H.shape[0]} rows")
    if M.shape != (n, H.shape[1]):
        raise ShapeError(f"M is {M.shape}, model is {(n, H.shape[1])}")


def kl_divergence(M, A, epsilon: float = EPS) -> float:
    """Generalized KL divergence sum(M log(M / (A+eps)) - M + A + eps), with 0 log 0 = 0."""
    M = np.asarray(M, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if M.shape != A.shape:
        raise ShapeError(f"shape mismatch {M.shape} vs {A.shape}")
    _check_nonneg("M", M)
    _check_nonneg("A", A)
    Y = A + epsilon
    return _kl(Y, M / Y)


def _kl(Y, rho) -> float:
    """sum Y * phi(rho - 1) where phi(u) = (1 + u) log(1 + u) - u; rho = M / Y.

    Written this way there is no cancellation near a perfect fit.
    """
    u = rho - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.log(rho)
        phi *= rho
    phi -= u
    np.nan_to_num(phi, copy=False, nan=1.0, neginf=1.0)  # 0 * log(0) where M == 0
    small = np.abs(u) < 1e-3
    if small.any():
        us = u[small]
        # alternating series sum_{k>=2} (-1)^k u^k / (k (k-1))
        phi[small] = us * us * (0.5 + us * (-1 / 6 + us * (1 / 12 + us * (-1 / 20 + us / 30))))
    return float(np.dot(Y.ravel(), phi.ravel()))


def _shifted(H, tau):
    """Stack of delayed copies: S[i, q, t] = H[q, t - i] (zero for t < i)."""
    r, m = H.shape
    S = np.zeros((tau, r, m))
    for i in range(min(tau, m)):
        S[i, :, i:] = H[:, : m - i]
    return S


def cnmf_apply(W, H) -> np.ndarray:
    """Model spectrogram sum_q sum_i W[:, i, q] H[q, t - i]."""
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if W.ndim != 3 or H.ndim != 2 or W.shape[2] != H.shape[0]:
        raise ShapeError(f"incompatible W {W.shape} and H {H.shape}")
    n, tau, r = W.shape
    return W.reshape(n, tau * r) @ _shifted(H, tau).reshape(tau * r, -1)


def _h_step(W, H, ratio, epsilon):
    n, tau, r = W.shape
    m = H.shape[1]
    # back[i, q, t] = sum_f W[f, i, q] ratio[f, t]
    back = (W.reshape(n, tau * r).T @ ratio).reshape(tau, r, m)
    colsum = W.sum(axis=0)  # (tau, r)
    numer = np.zeros_like(H)
    denom = np.zeros_like(H)
    for i in range(min(tau, m)):
        numer[:, : m - i] += back[i, :, i:]
        denom[:, : m - i] += colsum[i][:, None]
    return H * numer / (denom + epsilon)


def _w_step(W, H, ratio, epsilon):
    n, tau, r = W.shape
    S = _shifted(H, tau).reshape(tau * r, -1)
    numer = (ratio @ S.T).reshape(n, tau, r)
    denom = S.sum(axis=1).reshape(tau, r)
    return W * numer / (denom[None, :, :] + epsilon)


def update_H(M, W, H, epsilon: float = EPS) -> np.ndarray:
    """One multiplicative MM step on H with W fixed."""
    M, W, H = (np.asarray(a, dtype=np.float64) for a in (M, W, H))
    _check_shapes(M, W, H)
    return _h_step(W, H, M / (cnmf_apply(W, H) + epsilon), epsilon)


def update_W(M, W, H, epsilon: float = EPS) -> np.ndarray:
    """One multiplicative MM step on W with H fixed."""
    M, W, H = (np.asarray(a, dtype=np.float64) for a in (M, W, H))
    _check_shapes(M, W, H)
    return _w_step(W, H, M / (cnmf_apply(W, H) + epsilon), epsilon)


def normalize(W, H):
    """Rescale each template to unit l1 mass, pushing the scale into H. Zero templates are left alone."""
    mass = W.sum(axis=(0, 1))
    scale = np.where(mass > 0, mass, 1.0)
    return W / scale[None, None, :], H * scale[:, None]


def fit(M, W, H, cfg: SolverConfig, update_templates: bool = True, normalize_templates: bool = True):
    """Alternating multiplicative updates (W then H) for cfg.max_iters iterations.

    Returns (W, H, trace); trace holds the KL cost after each iteration.
    """
    M = np.asarray(M, dtype=np.float64)
    W = np.array(W, dtype=np.float64)
    H = np.array(H, dtype=np.float64)
    _check_shapes(M, W, H)
    for name, a in (("M", M), ("W", W), ("H", H)):
        _check_nonneg(name, a)
    eps = cfg.epsilon
    trace = FitTrace()
    ratio = M / (cnmf_apply(W, H) + eps)
    for _ in range(cfg.max_iters):
        if update_templates:
            W = _w_step(W, H, ratio, eps)
            if normalize_templates:
                W, H = normalize(W, H)
            ratio = M / (cnmf_apply(W, H) + eps)
        H = _h_step(W, H, ratio, eps)
        Y = cnmf_apply(W, H)
        Y += eps
        ratio = M / Y
        cost = _kl(Y, ratio)
        trace.cost_per_iteration.append(cost)
        if cfg.rel_tol > 0 and trace.iterations_run > 1:
            prev = trace.cost_per_iteration[-2]
            if abs(prev - cost) <= cfg.rel_tol * abs(prev):
                break
    return W, H, trace


def init_template(V, tau: int):
    """Start from the tau consecutive frames of V with the largest l1 mass.

    Returns (W0 of shape (n, tau, 1), h0 of shape (1, m), t_star). Ties go to the
    earliest window.
    """
    V = np.asarray(V, dtype=np.float64)
    n, m = V.shape
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if m < tau:
        raise ShapeError(f"spectrogram has {m} frames, fewer than tau={tau}")
    energy = np.convolve(V.sum(axis=0), np.ones(tau), mode="valid")
    t_star = int(np.argmax(energy))
    W0 = V[:, t_star : t_star + tau].copy()[:, :, None]
    h0 = np.zeros((1, m))
    h0[0, t_star] = 1.0
    return W0, h0, t_star


def train_note_template(V, tau: int = 10, cfg: SolverConfig = TRAIN_CONFIG):
    """Rank-one CNMF of one isolated-note spectrogram.

    Returns the unit-mass (n, tau) template and the fit trace; the activation is dropped.
    """
    V = np.asarray(V, dtype=np.float64)
    _check_nonneg("V", V)
    if not np.any(V > 0):
        raise UntrainableNoteError("all-zero spectrogram cannot be trained")
    W, h, _ = init_template(V, tau)
    W, h = normalize(W, h)
    W, h, trace = fit(V, W, h, cfg)
    return W[:, :, 0], trace


def warm_start(M, W, iters: int = WARM_START_ITERS, epsilon: float = EPS) -> np.ndarray:
    """Activation init: a few KL-NMF H updates using only the first frame of every template."""
    n, m = M.shape
    r = W.shape[2]
    H = np.full((r, m), M.sum() / (n * m * r))
    W0 = W[:, :1, :]
    for _ in range(iters):
        H = update_H(M, W0, H, epsilon)
    return H


def solve_activations(M, W, H0, cfg: SolverConfig = TRANSCRIBE_CONFIG):
    """Minimize KL(M, W * H) over H >= 0 with W frozen, starting from H0."""
    _, H, trace = fit(M, W, H0, cfg, update_templates=False)
    return H, trace


def transcribe_activations(M, W, cfg: SolverConfig = TRANSCRIBE_CONFIG):
    """Activations of a frozen template dictionary for spectrogram M."""
    M = np.asarray(M, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 3 or M.ndim != 2 or M.shape[0] != W.shape[0]:
        raise ShapeError(f"spectrogram has {M.shape[0]} bins, templates have {W.shape[0]}")
    _check_nonneg("M", M)
    H0 = warm_start(M, W, epsilon=cfg.epsilon)
    return solve_activations(M, W, H0, cfg)
