"""Tabular softmax policy under gradient flow.

Exact-expectation machinery for a policy with one free logit per output:
the policy-gradient field, its closed-form probability velocity, Euler
and RK4 integration of the flow, majority-vote collapse runs, hitting
times against the proxy-reward convergence bound, and an enumeration
check of the latent-state evidence lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InstanceInvalid, NonConvergence

GROWTH_RATE = 2.0  # probability mass can grow at most like exp(2 t)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


@dataclass
class TabularPolicy:
    """Softmax distribution over a finite output set, one logit per output."""

    logits: np.ndarray
    prompt_id: str = ""

    @classmethod
    def from_probs(cls, probs, prompt_id: str = "") -> "TabularPolicy":
        p = np.asarray(probs, dtype=float)
        if (p <= 0).any():
            raise ValueError("initial probabilities must be strictly positive")
        return cls(np.log(p / p.sum()), prompt_id)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    @property
    def size(self) -> int:
        return len(self.logits)


def exact_policy_gradient(policy: TabularPolicy, rewards: np.ndarray) -> np.ndarray:
    """Exact objective gradient: component y is pi(y) * (r(y) - E_pi[r]).

    Components always sum to zero (the softmax tangent space).
    """
    p = policy.probs
    r = np.asarray(rewards, dtype=float)
    return p * (r - float(p @ r))


def kl_gradient(policy: TabularPolicy, ref_log_probs: np.ndarray) -> np.ndarray:
    """Gradient of KL(pi_theta || pi_ref) with respect to the logits."""
    p = policy.probs
    ratio = np.log(p) - ref_log_probs
    return p * (ratio - float(p @ ratio))


def policy_velocity(probs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """Closed-form d pi / dt under the exact gradient flow.

    pi(y)^2 (r(y) - E[r]) - pi(y) * sum_y' pi(y')^2 (r(y') - E[r]).
    """
    p = np.asarray(probs, dtype=float)
    r = np.asarray(rewards, dtype=float)
    centered = r - float(p @ r)
    weighted = p * p * centered
    return weighted - p * weighted.sum()


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings for a gradient-flow run."""

    step_size: float = 1e-3
    max_time: float = 50.0
    integrator: str = "rk4"  # "euler" | "rk4"
    kl_coefficient: float = 0.0
    sample_count: int = 16
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.kl_coefficient < 0:
            raise ValueError("kl_coefficient must be >= 0")


def _theta_derivative(logits, rewards, lam, ref_log_probs):
    policy = TabularPolicy(logits)
    grad = exact_policy_gradient(policy, rewards)
    if lam > 0.0 and ref_log_probs is not None:
        grad = grad - lam * kl_gradient(policy, ref_log_probs)
    return grad


def flow_step(
    policy: TabularPolicy,
    rewards: np.ndarray,
    config: FlowConfig,
    ref_log_probs: np.ndarray | None = None,
) -> TabularPolicy:
    """Advance the logits one step along d theta / dt = grad J (- lam grad KL)."""
    h = config.step_size
    lam = config.kl_coefficient
    f = lambda th: _theta_derivative(th, rewards, lam, ref_log_probs)  # noqa: E731
    th = policy.logits
    if config.integrator == "euler":
        new = th + h * f(th)
    else:
        k1 = f(th)
        k2 = f(th + 0.5 * h * k1)
        k3 = f(th + 0.5 * h * k2)
        k4 = f(th + h * k3)
        new = th + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return replace(policy, logits=new)


def growth_bound_satisfied(probs0, times, probs_series, rtol: float = 1e-9) -> bool:
    """Every checkpoint obeys pi_t(y) <= pi_0(y) * exp(2 t), up to rtol."""
    p0 = np.asarray(probs0, dtype=float)
    for t, p in zip(times, probs_series):
        cap = p0 * np.exp(GROWTH_RATE * float(t))
        if (np.asarray(p) > cap * (1.0 + rtol)).any():
            return False
    return True


# ---------------------------------------------------------------------------
# majority-vote collapse


@dataclass
class CollapseReport:
    """Time series of a majority-vote reward run.

    In exact mode the modal output's probability is non-decreasing and,
    when the modal output is not the ground truth, true accuracy decays
    while the modal output keeps collecting reward 1.
    """

    times: np.ndarray
    probs: np.ndarray  # checkpoints x outputs
    y_star: np.ndarray
    modal_prob: np.ndarray
    true_accuracy: np.ndarray
    expected_proxy: np.ndarray
    target: float
    converged: bool
    monotone: bool
    growth_ok: bool


def simulate_collapse(
    policy0: TabularPolicy,
    config: FlowConfig,
    mode: str = "exact",
    truth_index: int | None = None,
    target: float = 0.99,
) -> CollapseReport:
    """Evolve a policy under the majority-vote reward until ``max_time``.

    "exact" mode rewards the argmax of the current policy (ties break to
    the lowest index); "sampled" re-derives the modal output each step
    from ``sample_count`` fresh draws.
    """
    if policy0.size < 2:
        raise ValueError("collapse needs at least two outputs")
    if mode not in ("exact", "sampled"):
        raise ValueError(f"unknown collapse mode {mode!r}")
    rng = np.random.default_rng(config.seed)
    steps = int(round(config.max_time / config.step_size))
    policy = policy0
    p0 = policy0.probs

    times, probs, stars = [], [], []
    for step in range(steps + 1):
        p = policy.probs
        if mode == "exact":
            star = int(np.argmax(p))
        else:
            draws = rng.choice(policy.size, size=config.sample_count, p=p)
            star = int(np.argmax(np.bincount(draws, minlength=policy.size)))
        if step % config.record_every == 0 or step == steps:
            times.append(step * config.step_size)
            probs.append(p)
            stars.append(star)
        if step == steps:
            break
        rewards = np.zeros(policy.size)
        rewards[star] = 1.0
        policy = flow_step(policy, rewards, config, ref_log_probs=np.log(p0))

    times_arr = np.array(times)
    probs_arr = np.array(probs)
    stars_arr = np.array(stars)
    modal = probs_arr[np.arange(len(stars_arr)), stars_arr]
    truth = truth_index if truth_index is not None else int(stars_arr[0])
    accuracy = probs_arr[:, truth]
    expected_proxy = modal  # E_pi[1{y = y*}] = pi(y*)
    monotone = bool(np.all(np.diff(modal) >= 0.0)) if mode == "exact" else True
    return CollapseReport(
        times=times_arr,
        probs=probs_arr,
        y_star=stars_arr,
        modal_prob=modal,
        true_accuracy=accuracy,
        expected_proxy=expected_proxy,
        target=target,
        converged=bool(modal[-1] >= target),
        monotone=monotone,
        growth_ok=growth_bound_satisfied(p0, times_arr, probs_arr),
    )


# ---------------------------------------------------------------------------
# convergence-time bound


@dataclass
class ConvergenceInstance:
    """A proxy-reward flow with a true-reward target raise of gamma.

    The true reward is the indicator of the preferred set; the proxy
    reward is 1 on the preferred set and at most the initial expected
    proxy elsewhere, so only the preferred outputs are over-rewarded.
    """

    probs0: np.ndarray
    r_true: np.ndarray
    r_proxy: np.ndarray
    gamma: float
    y_plus: tuple[int, ...]

    def __post_init__(self):
        self.probs0 = np.asarray(self.probs0, dtype=float)
        self.r_true = np.asarray(self.r_true, dtype=float)
        self.r_proxy = np.asarray(self.r_proxy, dtype=float)
        self.y_plus = tuple(int(y) for y in self.y_plus)

    @property
    def initial_true(self) -> float:
        return float(self.probs0 @ self.r_true)

    @property
    def initial_proxy(self) -> float:
        return float(self.probs0 @ self.r_proxy)

    @property
    def rho(self) -> float:
        return self.initial_true + self.gamma

    @property
    def sigma(self) -> float:
        return (1.0 - self.rho) * (1.0 - self.initial_proxy)

    @property
    def y_minus(self) -> tuple[int, ...]:
        e0 = self.initial_proxy
        return tuple(
            y for y in range(len(self.probs0)) if y not in self.y_plus and self.r_proxy[y] > e0
        )

    @property
    def bound(self) -> float:
        """Closed-form cap on the hitting time.

        4 |Y+| / ((1 - rho) sigma) * (1 / pi0(Y+) - 1 / rho).
        """
        mass_plus = float(self.probs0[list(self.y_plus)].sum())
        return (
            4.0
            * len(self.y_plus)
            / ((1.0 - self.rho) * self.sigma)
            * (1.0 / mass_plus - 1.0 / self.rho)
        )

    def validate(self) -> None:
        p0 = self.probs0
        if abs(p0.sum() - 1.0) > 1e-9 or (p0 <= 0).any():
            raise InstanceInvalid("probs0 must be a strictly positive distribution")
        if self.gamma < 0:
            raise InstanceInvalid("gamma must be >= 0")
        if not self.y_plus:
            raise InstanceInvalid("the preferred set is empty")
        if ((self.r_true < 0) | (self.r_true > 1)).any() or (
            (self.r_proxy < 0) | (self.r_proxy > 1)
        ).any():
            raise InstanceInvalid("reward values must lie in [0, 1]")
        indicator = np.zeros(len(p0))
        indicator[list(self.y_plus)] = 1.0
        if not np.array_equal(self.r_true, indicator):
            raise InstanceInvalid("true reward must be the indicator of the preferred set")
        if not np.all(self.r_proxy[list(self.y_plus)] == 1.0):
            raise InstanceInvalid("proxy reward must be 1 on the preferred set")
        if self.gamma > 0 and not (0.0 < self.rho < 1.0):
            raise InstanceInvalid(f"rho = {self.rho} outside (0, 1)")
        if self.gamma > 0:
            if self.sigma <= 0:
                raise InstanceInvalid("sigma must be positive")
            e0 = self.initial_proxy
            for y in self.y_plus:
                if not self.r_proxy[y] > e0:
                    raise InstanceInvalid("preferred outputs must beat the initial proxy mean")
            mass_plus = float(p0[list(self.y_plus)].sum())
            mass_minus = float(p0[list(self.y_minus)].sum()) if self.y_minus else 0.0
            cap = (
                self.sigma
                * (1.0 - self.rho)
                * mass_plus**2
                / (4.0 * len(self.y_plus))
                * np.exp(-GROWTH_RATE * self.bound)
            )
            if mass_minus > cap:
                raise InstanceInvalid(
                    f"over-rewarded non-preferred mass {mass_minus} exceeds {cap}"
                )


@dataclass
class ConvergenceReport:
    hit_time: float
    bound: float
    times: np.ndarray
    expected_true: np.ndarray
    probs: np.ndarray  # checkpoints x outputs
    growth_ok: bool

    @property
    def within_bound(self) -> bool:
        return self.hit_time <= self.bound


def simulate_convergence(instance: ConvergenceInstance, config: FlowConfig) -> ConvergenceReport:
    """Run the proxy-reward flow until the true-reward target is hit.

    Returns the (interpolated) hitting time; raises NonConvergence when
    the horizon ends first.
    """
    instance.validate()
    rho = instance.rho
    policy = TabularPolicy.from_probs(instance.probs0)
    p0 = policy.probs
    h = config.step_size
    steps = int(round(config.max_time / h))

    times = [0.0]
    expected = [float(p0 @ instance.r_true)]
    hit: float | None = 0.0 if instance.gamma == 0.0 else None
    checkpoints = [p0]
    if hit is None:
        for step in range(1, steps + 1):
            policy = flow_step(policy, instance.r_proxy, config, ref_log_probs=np.log(p0))
            p = policy.probs
            e_true = float(p @ instance.r_true)
            t = step * h
            if step % config.record_every == 0 or e_true >= rho or step == steps:
                times.append(t)
                expected.append(e_true)
                checkpoints.append(p)
            if e_true >= rho:
                # first discrete time at/above target: an upper bound on
                # the true hitting time, which is what the bound check needs
                hit = t
                break
        if hit is None:
            raise NonConvergence(
                f"target {rho} not reached by t = {config.max_time} "
                f"(final expected true reward {expected[-1]})"
            )
    return ConvergenceReport(
        hit_time=hit,
        bound=instance.bound,
        times=np.array(times),
        expected_true=np.array(expected),
        probs=np.array(checkpoints),
        growth_ok=growth_bound_satisfied(p0, times, checkpoints),
    )


# ---------------------------------------------------------------------------
# evidence lower bound over latent states


@dataclass
class LatentTabularModel:
    """Prior over latent states and per-state output conditionals."""

    prior: np.ndarray  # (S,)
    conditional: np.ndarray  # (S, Y), rows sum to 1

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=float)
        self.conditional = np.asarray(self.conditional, dtype=float)
        if abs(self.prior.sum() - 1.0) > 1e-9 or (self.prior <= 0).any():
            raise ValueError("prior must be a strictly positive distribution")
        if (np.abs(self.conditional.sum(axis=1) - 1.0) > 1e-9).any():
            raise ValueError("conditional rows must sum to 1")

    @property
    def marginal(self) -> np.ndarray:
        """Exact output marginal by enumerating latent states."""
        return self.prior @ self.conditional

    def posterior(self) -> np.ndarray:
        """(Y, S) posterior over latent states for each output."""
        joint = self.prior[:, None] * self.conditional  # (S, Y)
        return (joint / joint.sum(axis=0, keepdims=True)).T


@dataclass
class ElboReport:
    """Per-output gap log p(y) - ELBO(q, y); the bound holds when gaps >= 0."""

    gaps: np.ndarray
    tol: float = 1e-9

    @property
    def holds(self) -> bool:
        return bool((self.gaps >= -self.tol).all())

    @property
    def tight(self) -> bool:
        return bool((np.abs(self.gaps) <= self.tol).all())


def verify_elbo(model: LatentTabularModel, q) -> ElboReport:
    """Evaluate the latent-state evidence lower bound for each output.

    ``q`` is a distribution over latent states, either one shared row of
    shape (S,) or a per-output matrix of shape (Y, S). The bound uses the
    conditional log-likelihood directly as the reward term:

        log p(y) >= E_q[log p(y | s)] - KL(q || prior).
    """
    q = np.asarray(q, dtype=float)
    n_latent, n_out = model.conditional.shape
    if q.ndim == 1:
        q = np.tile(q, (n_out, 1))
    if q.shape != (n_out, n_latent):
        raise ValueError(f"q must have shape ({n_out}, {n_latent})")
    if (q <= 0).any():
        raise ValueError("variational distribution must be strictly positive")
    q = q / q.sum(axis=1, keepdims=True)

    log_marginal = np.log(model.marginal)
    log_cond = np.log(model.conditional)  # (S, Y)
    reward_term = np.einsum("ys,sy->y", q, log_cond)
    kl = (q * (np.log(q) - np.log(model.prior)[None, :])).sum(axis=1)
    return ElboReport(gaps=log_marginal - (reward_term - kl))


def random_latent_model(n_latent: int, n_outputs: int, rng) -> LatentTabularModel:
    prior = rng.dirichlet(np.ones(n_latent))
    conditional = rng.dirichlet(np.ones(n_outputs), size=n_latent)
    return LatentTabularModel(prior, conditional)
