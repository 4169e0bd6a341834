"""
Diagonal Gaussians, evidence lower bounds and a linear-Gaussian world model.

Generative model
^^^^^^^^^^^^^^^^

The linear-Gaussian world model instantiates

::

    s_1         ~ N(0, I)
    s_{t+1}     ~ N(A s_t + B a_t, diag(transition_std^2))
    o_t | s_t   ~ N(G s_t,        diag(obs_std^2))
    a_t | s_t   ~ N(Pi s_t,       diag(action_std^2))

Observations and actions are both emissions of the state, so the exact
evidence ``log p(o_{1:T}, a_{1:T})`` follows from a Kalman filter over the
stacked emission ``[o_t; a_t] = [G; Pi] s_t + noise``, with ``B a_t`` entering
the prediction step as a known input.

Bound
^^^^^

For a factorised variational posterior ``q(s_{1:T}) = prod_t q_t(s_t)``,

::

    ELBO = sum_t E_q[log p(o_t | s_t) + log p(a_t | s_t)]
           - beta * sum_t E_{q_{t-1}}[KL(q_t || p(s_t | s_{t-1}, a_{t-1}))]

which is at most the log evidence for ``beta = 1``. The free energy is its
negation.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, special, stats

from .fields import Field2D, Field3D
from .util import NumericalError, as_float_vector, check_finite, get_rng


@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    """``N(mean, diag(std^2))`` with strictly positive ``std``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = as_float_vector(self.mean, "mean")
        std = as_float_vector(self.std, "std", len(mean))
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive.")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        """Return ``N(0, I)`` of dimension ``dim``."""
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:  # noqa D102
        return self.mean.shape[0]


def _as_matrix(values, shape: Tuple[int, int], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(shape)
    check_finite(arr, name)
    return arr


@dataclass(frozen=True, eq=False)
class LinearGaussianWorldModel:
    """
    Linear-Gaussian state-space world model.

    Parameters
    ----------
    transition_matrix:
        ``A``, n x n.
    action_matrix:
        ``B``, n x m.
    observation_matrix:
        ``G``, p x n.
    policy_matrix:
        ``Pi``, m x n.
    transition_std, obs_std, action_std:
        noise standard deviations of lengths n, p and m.
    """

    transition_matrix: np.ndarray
    action_matrix: np.ndarray
    observation_matrix: np.ndarray
    policy_matrix: np.ndarray
    transition_std: np.ndarray
    obs_std: np.ndarray
    action_std: np.ndarray

    def __post_init__(self):
        transition_std = as_float_vector(self.transition_std, "transition_std")
        obs_std = as_float_vector(self.obs_std, "obs_std")
        action_std = np.asarray(self.action_std, dtype=np.float64).reshape(-1)
        n, p, m = len(transition_std), len(obs_std), len(action_std)
        if n == 0 or p == 0:
            raise ValueError("State and observation dimensions must be at least 1.")
        for name, std in [
            ("transition_std", transition_std),
            ("obs_std", obs_std),
            ("action_std", action_std),
        ]:
            check_finite(std, name)
            if np.any(std <= 0):
                raise ValueError(f"{name} must be strictly positive.")
        for name, shape in [
            ("transition_matrix", (n, n)),
            ("action_matrix", (n, m)),
            ("observation_matrix", (p, n)),
            ("policy_matrix", (m, n)),
        ]:
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.size != shape[0] * shape[1]:
                raise ValueError(
                    f"{name} must have shape {shape}, got {value.shape}."
                )
            object.__setattr__(self, name, _as_matrix(value, shape, name))
        object.__setattr__(self, "transition_std", transition_std)
        object.__setattr__(self, "obs_std", obs_std)
        object.__setattr__(self, "action_std", action_std)

    @property
    def state_dim(self) -> int:  # noqa D102
        return self.transition_std.shape[0]

    @property
    def obs_dim(self) -> int:  # noqa D102
        return self.obs_std.shape[0]

    @property
    def action_dim(self) -> int:  # noqa D102
        return self.action_std.shape[0]

    @property
    def emission_matrix(self) -> np.ndarray:
        """Stacked ``[G; Pi]``."""
        return np.vstack([self.observation_matrix, self.policy_matrix])

    @property
    def emission_std(self) -> np.ndarray:
        """Stacked ``[obs_std; action_std]``."""
        return np.concatenate([self.obs_std, self.action_std])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observations ``o_1..o_T`` (T x p) and actions ``a_1..a_T`` (T x m)."""

    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[:, None]
        if actions.ndim == 1:
            if actions.size == 0:
                actions = np.zeros((len(obs), 0))
            else:
                actions = actions[:, None]
        if len(obs) < 1:
            raise ValueError("A trajectory needs at least one step.")
        if len(obs) != len(actions):
            raise ValueError(
                f"observations and actions must have the same length, got "
                f"{len(obs)} and {len(actions)}."
            )
        check_finite(obs, "observations")
        check_finite(actions, "actions")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return self.observations.shape[0]

    def check_model(self, model: LinearGaussianWorldModel) -> None:
        """Raise if the trajectory dimensions do not match ``model``."""
        if self.observations.shape[1] != model.obs_dim:
            raise ValueError(
                f"Observations have dimension {self.observations.shape[1]}, the "
                f"model expects {model.obs_dim}."
            )
        if self.actions.shape[1] != model.action_dim:
            raise ValueError(
                f"Actions have dimension {self.actions.shape[1]}, the model "
                f"expects {model.action_dim}."
            )


def _check_same_dim(q: DiagonalGaussian, p: DiagonalGaussian) -> None:
    if q.dim != p.dim:
        raise ValueError(f"Dimension mismatch: {q.dim} != {p.dim}.")


def _kl_terms(q_mean, q_std, p_mean, p_std, extra_var=0.0) -> np.ndarray:
    # extra_var adds the variance of a random prior mean to the squared gap
    return (
        np.log(p_std / q_std)
        + (q_std ** 2 + (q_mean - p_mean) ** 2 + extra_var) / (2 * p_std ** 2)
        - 0.5
    )


def kl_diag(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """Closed-form ``KL(q || p)`` between diagonal Gaussians."""
    _check_same_dim(q, p)
    return max(float(np.sum(_kl_terms(q.mean, q.std, p.mean, p.std))), 0.0)


def kl_diag_grad(
    q: DiagonalGaussian, p: DiagonalGaussian
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`kl_diag` with respect to ``q.mean`` and ``q.std``."""
    _check_same_dim(q, p)
    grad_mean = (q.mean - p.mean) / p.std ** 2
    grad_std = -1.0 / q.std + q.std / p.std ** 2
    return grad_mean, grad_std


def cross_entropy_diag(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """Closed-form ``-E_q[log p]``."""
    _check_same_dim(q, p)
    return float(
        np.sum(
            0.5 * np.log(2 * np.pi * p.std ** 2)
            + (q.std ** 2 + (q.mean - p.mean) ** 2) / (2 * p.std ** 2)
        )
    )


def sample_reparam(d: DiagonalGaussian, noise) -> np.ndarray:
    """Return ``mean + std * noise``."""
    noise = as_float_vector(noise, "noise", d.dim)
    return d.mean + d.std * noise


def entropy_diag(d: DiagonalGaussian) -> float:
    """Differential entropy ``sum_i 1/2 log(2 pi e) + log std_i``."""
    return float(np.sum(stats.norm(loc=d.mean, scale=d.std).entropy()))


def gaussian_nll(x, mean) -> float:
    """Negative log-likelihood of ``x`` under ``N(mean, I)``."""
    x = as_float_vector(x, "x")
    mean = as_float_vector(mean, "mean", len(x))
    return float(-np.sum(stats.norm.logpdf(x, loc=mean)))


def per_cell_ce(logits: Field3D, labels: Field2D) -> np.ndarray:
    """Cross-entropy of every cell: ``-log softmax(logits)[label]``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 3 or logits.shape[1:] != labels.shape:
        raise ValueError(
            f"logits of shape {logits.shape} do not match labels of shape "
            f"{labels.shape}."
        )
    n_classes = logits.shape[0]
    if np.any(labels != np.round(labels)) or labels.min() < 0 or (
        labels.max() >= n_classes
    ):
        raise ValueError(f"Labels must be integer class ids in [0, {n_classes}).")
    log_probs = special.log_softmax(logits, axis=0)
    idx = labels.astype(np.int64)[None, :, :]
    return -np.take_along_axis(log_probs, idx, axis=0)[0]


def categorical_ce(logits: Field3D, labels: Field2D) -> float:
    """Mean cross-entropy over all cells."""
    return float(np.mean(per_cell_ce(logits, labels).ravel()))


def single_latent_elbo(recon_log_liks: Sequence[float], kl: float) -> float:
    """Lower bound with one latent: sum of reconstruction terms minus ``kl``."""
    if kl < 0:
        raise ValueError(f"KL must be non-negative, got {kl}.")
    return float(np.sum(recon_log_liks)) - float(kl)


def _mvn_logpdf(residual: np.ndarray, cov: np.ndarray) -> float:
    try:
        return float(
            stats.multivariate_normal.logpdf(
                residual, mean=np.zeros_like(residual), cov=cov
            )
        )
    except (ValueError, np.linalg.LinAlgError) as err:
        raise NumericalError(f"Innovation covariance is not positive definite: {err}")


def _kalman_pass(
    model: LinearGaussianWorldModel, traj: Trajectory
) -> Tuple[List[np.ndarray], List[np.ndarray], float]:
    traj.check_model(model)
    A, B = model.transition_matrix, model.action_matrix
    H = model.emission_matrix
    Q = np.diag(model.transition_std ** 2)
    R = np.diag(model.emission_std ** 2)

    mean = np.zeros(model.state_dim)
    cov = np.eye(model.state_dim)
    means, covs = [], []
    log_evidence = 0.0
    for t in range(len(traj)):
        if t > 0:
            mean = A @ mean + B @ traj.actions[t - 1]
            cov = A @ cov @ A.T + Q
        y = np.concatenate([traj.observations[t], traj.actions[t]])
        residual = y - H @ mean
        S = H @ cov @ H.T + R
        log_evidence += _mvn_logpdf(residual, S)
        try:
            factor = linalg.cho_factor(S)
        except linalg.LinAlgError as err:
            raise NumericalError(f"Cholesky of the innovation failed at t={t}: {err}")
        gain = linalg.cho_solve(factor, H @ cov).T
        mean = mean + gain @ residual
        cov = cov - gain @ H @ cov
        cov = 0.5 * (cov + cov.T)
        if np.any(np.diag(cov) <= 0):
            raise NumericalError(f"Posterior variance became non-positive at t={t}.")
        means.append(mean.copy())
        covs.append(cov.copy())
    return means, covs, log_evidence


def lgssm_filter(
    model: LinearGaussianWorldModel, traj: Trajectory
) -> List[DiagonalGaussian]:
    """
    Exact Kalman filtering ``q(s_t | o_{<=t}, a_{<t})`` followed by projection of
    every covariance onto its diagonal.

    The recursion itself carries the full covariance; only the returned
    distributions are diagonal.
    """
    means, covs, _ = _kalman_pass(model, traj)
    return [DiagonalGaussian(m, np.sqrt(np.diag(c))) for m, c in zip(means, covs)]


def kalman_log_evidence(model: LinearGaussianWorldModel, traj: Trajectory) -> float:
    """Exact ``log p(o_{1:T}, a_{1:T})`` by prediction-error decomposition."""
    return _kalman_pass(model, traj)[2]


def _check_bound_inputs(model, traj, q, beta) -> None:
    traj.check_model(model)
    if len(q) != len(traj):
        raise ValueError(
            f"Need one variational distribution per step: {len(traj)} steps, "
            f"{len(q)} distributions."
        )
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}.")
    for t, q_t in enumerate(q):
        if q_t.dim != model.state_dim:
            raise ValueError(
                f"q[{t}] has dimension {q_t.dim}, the state has {model.state_dim}."
            )


def _analytic_terms(model, traj, q) -> Tuple[float, float]:
    G, Pi = model.observation_matrix, model.policy_matrix
    A, B = model.transition_matrix, model.action_matrix
    recon, kl = 0.0, 0.0
    for t, q_t in enumerate(q):
        var = q_t.std ** 2
        for mat, y, std in [
            (G, traj.observations[t], model.obs_std),
            (Pi, traj.actions[t], model.action_std),
        ]:
            recon += np.sum(stats.norm.logpdf(y, loc=mat @ q_t.mean, scale=std))
            recon -= 0.5 * np.sum((mat ** 2 @ var) / std ** 2)
        if t == 0:
            kl += np.sum(_kl_terms(q_t.mean, q_t.std, 0.0, 1.0))
        else:
            prev = q[t - 1]
            prior_mean = A @ prev.mean + B @ traj.actions[t - 1]
            extra_var = A ** 2 @ prev.std ** 2
            kl += np.sum(
                _kl_terms(
                    q_t.mean, q_t.std, prior_mean, model.transition_std, extra_var
                )
            )
    return float(recon), float(kl)


def _sampled_terms(model, traj, q, rng, n_samples) -> Tuple[np.ndarray, np.ndarray]:
    G, Pi = model.observation_matrix, model.policy_matrix
    A, B = model.transition_matrix, model.action_matrix
    recon = np.zeros(n_samples)
    kl = np.zeros(n_samples)
    prev_sample = None
    for t, q_t in enumerate(q):
        noise = rng.standard_normal((n_samples, model.state_dim))
        sample = q_t.mean + q_t.std * noise
        recon += stats.norm.logpdf(
            traj.observations[t], loc=sample @ G.T, scale=model.obs_std
        ).sum(axis=1)
        recon += stats.norm.logpdf(
            traj.actions[t], loc=sample @ Pi.T, scale=model.action_std
        ).sum(axis=1)
        if t == 0:
            kl += np.sum(_kl_terms(q_t.mean, q_t.std, 0.0, 1.0))
        else:
            prior_mean = prev_sample @ A.T + B @ traj.actions[t - 1]
            kl += _kl_terms(
                q_t.mean, q_t.std, prior_mean, model.transition_std
            ).sum(axis=1)
        prev_sample = sample
    return recon, kl


def free_energy_samples(
    model: LinearGaussianWorldModel,
    traj: Trajectory,
    q: Sequence[DiagonalGaussian],
    beta: float = 1.0,
    noise_seed: Optional[int] = 0,
    n_samples: int = 1,
) -> np.ndarray:
    """
    Per-sample values of the bound, each from one reparameterised draw of
    ``s_{1:T}``. Their mean is the estimate returned by
    :func:`sequential_free_energy`; their spread gives its standard error.
    """
    _check_bound_inputs(model, traj, q, beta)
    if n_samples < 1:
        raise ValueError(f"n_samples must be at least 1, got {n_samples}.")
    recon, kl = _sampled_terms(model, traj, q, get_rng(noise_seed), n_samples)
    return recon - beta * kl


def sequential_free_energy(
    model: LinearGaussianWorldModel,
    traj: Trajectory,
    q: Sequence[DiagonalGaussian],
    beta: float = 1.0,
    noise_seed: Optional[int] = 0,
    n_samples: int = 1,
    analytic: bool = False,
) -> float:
    """
    Estimate the sequential evidence lower bound (to be maximised; the free
    energy is its negation).

    Parameters
    ----------
    model, traj:
        world model and observed trajectory.
    q:
        one diagonal Gaussian per timestep.
    beta:
        weight of the KL terms; ``beta = 1`` gives the bound proper.
    noise_seed:
        seed of the reparameterisation noise.
    n_samples:
        number of draws averaged; the default single draw matches the training
        estimator.
    analytic:
        if True, compute every expectation in closed form and ignore the noise.

    Returns
    -------
    float
    """
    if analytic:
        _check_bound_inputs(model, traj, q, beta)
        recon, kl = _analytic_terms(model, traj, q)
        return recon - beta * kl
    return float(
        np.mean(free_energy_samples(model, traj, q, beta, noise_seed, n_samples))
    )


def random_model(
    seed: Optional[int],
    state_dim: int = 2,
    obs_dim: int = 2,
    action_dim: int = 1,
) -> LinearGaussianWorldModel:
    """
    Draw a stable world model: ``A`` is scaled to spectral radius below one and
    every noise std lies in ``[0.3, 1.0]``.
    """
    rng = get_rng(seed)
    A = rng.standard_normal((state_dim, state_dim))
    radius = np.max(np.abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.5, 0.95) / max(radius, 1e-12)
    return LinearGaussianWorldModel(
        transition_matrix=A,
        action_matrix=0.5 * rng.standard_normal((state_dim, action_dim)),
        observation_matrix=rng.standard_normal((obs_dim, state_dim)),
        policy_matrix=0.5 * rng.standard_normal((action_dim, state_dim)),
        transition_std=rng.uniform(0.3, 1.0, state_dim),
        obs_std=rng.uniform(0.3, 1.0, obs_dim),
        action_std=rng.uniform(0.3, 1.0, action_dim),
    )


def sample_trajectory(
    model: LinearGaussianWorldModel, n_steps: int, seed: Optional[int]
) -> Trajectory:
    """Draw ``o_{1:T}`` and ``a_{1:T}`` from the generative model."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}.")
    rng = get_rng(seed)
    obs = np.zeros((n_steps, model.obs_dim))
    actions = np.zeros((n_steps, model.action_dim))
    state = rng.standard_normal(model.state_dim)
    for t in range(n_steps):
        obs[t] = model.observation_matrix @ state + model.obs_std * rng.standard_normal(
            model.obs_dim
        )
        actions[t] = model.policy_matrix @ state + model.action_std * (
            rng.standard_normal(model.action_dim)
        )
        state = (
            model.transition_matrix @ state
            + model.action_matrix @ actions[t]
            + model.transition_std * rng.standard_normal(model.state_dim)
        )
    return Trajectory(obs, actions)
