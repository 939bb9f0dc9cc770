"""PPO with generalized advantage estimation over the linear routing policy.

Rollouts draw task families uniformly so rare missingness patterns get the
same exposure as fully observed ones. Episodes hash-split 80/20 into support
and query; only support episodes ever reach the policy update, query episodes
feed per-family diagnostics. The clipped surrogate is ascended with full-batch
gradient steps; the value function is a ridge regression onto GAE returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, Interaction
from .errors import ConfigurationError, UsageError
from .policies import FEATURE_DIM, N_ACTIONS, LinearPolicy, PolicyParams, action_mask


@dataclass
class TrajectoryStep:
    features: np.ndarray
    action_index: int
    log_prob: float
    reward: float
    value: float
    mask: np.ndarray


@dataclass
class Trajectory:
    episode_id: str
    family_id: str
    split: str
    steps: list[TrajectoryStep]
    final_ndcg10: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.steps])

    def total_reward(self) -> float:
        return float(self.rewards().sum())


@dataclass
class ValueParams:
    w: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    b: float = 0.0

    def predict(self, features: np.ndarray) -> float:
        return float(self.w @ features + self.b)

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "b": self.b}

    @staticmethod
    def from_dict(data: dict) -> "ValueParams":
        return ValueParams(w=np.array(data["w"], dtype=np.float64), b=float(data["b"]))


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 1e-5  # published default; the linear head wants ~5e-2
    batch_episodes: int = 64
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    iterations: int = 500
    update_epochs: int = 4
    entropy_coef: float = 0.01
    value_ridge: float = 1e-6
    log_every: int = 25
    diag_episodes_per_family: int = 6
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigurationError("clip epsilon must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("GAE lambda must lie in [0, 1]")
        if self.batch_episodes < 1:
            raise ConfigurationError("batch size must be >= 1")


def run_episode(env: Environment, episode, policy, rng=None, greedy: bool = False,
                value_params: ValueParams | None = None) -> Trajectory:
    """Roll one episode to termination, recording per-step policy internals."""
    steps: list[TrajectoryStep] = []
    done = False
    while not done:
        view = episode.view()
        if isinstance(policy, LinearPolicy):
            action, idx, features, logp = policy.act_with_info(view, rng, greedy)
            mask = action_mask(policy.params.mode)
        else:
            from .policies import ACTION_INDEX, extract_features

            action, _ = policy.act(view, rng, greedy)
            features = extract_features(view)
            idx = ACTION_INDEX.get(action.kind, -1)
            mask = action_mask(view.mode)
            logp = 0.0
        value = value_params.predict(features) if value_params is not None else 0.0
        _, reward, done = env.step(episode, action)
        steps.append(TrajectoryStep(features, idx, logp, reward, value, mask))
    return Trajectory(
        episode_id=episode.episode_id,
        family_id=episode.family.family_id,
        split=episode.split,
        steps=steps,
        final_ndcg10=episode.final_ndcg10(),
    )


def sample_training_episode(env: Environment, interactions: list[Interaction],
                            rng: np.random.Generator, want_split: str = "support"):
    from .environment import split_tag

    family = env.sample_task_family(rng)
    for _ in range(200):
        user, target = env.sample_pair(rng, interactions)
        tag = split_tag(family.family_id, user, target)
        if tag == want_split:
            return env.make_episode(user, target, family, split=tag)
    raise ConfigurationError(f"could not sample a {want_split}-split episode")


def collect_rollouts(
    policy: LinearPolicy,
    env: Environment,
    n_episodes: int,
    rng: np.random.Generator,
    interactions: list[Interaction],
    value_params: ValueParams | None = None,
) -> list[Trajectory]:
    """n support-split trajectories with families drawn uniformly."""
    out = []
    for _ in range(n_episodes):
        episode = sample_training_episode(env, interactions, rng)
        out.append(run_episode(env, episode, policy, rng, value_params=value_params))
    return out


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted TD-residual sums; returns = advantages + values."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    if not (len(rewards) == len(values) == len(next_values)):
        raise UsageError("GAE inputs must have equal lengths")
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        advantages[t] = acc
    return advantages, advantages + values


def attach_gae(trajectories: list[Trajectory], gamma: float, lam: float) -> None:
    for traj in trajectories:
        values = traj.values()
        next_values = np.append(values[1:], 0.0)  # terminal state has value 0
        traj.advantages, traj.returns = compute_gae(
            traj.rewards(), values, next_values, gamma, lam
        )


def _flatten(trajectories: list[Trajectory]):
    feats = np.vstack([s.features for t in trajectories for s in t.steps])
    acts = np.array([s.action_index for t in trajectories for s in t.steps])
    logp_old = np.array([s.log_prob for t in trajectories for s in t.steps])
    masks = np.vstack([s.mask for t in trajectories for s in t.steps])
    adv = np.concatenate([t.advantages for t in trajectories])
    rets = np.concatenate([t.returns for t in trajectories])
    return feats, acts, logp_old, masks, adv, rets


def _log_policy(theta: np.ndarray, feats: np.ndarray, masks: np.ndarray):
    logits = feats @ theta.T
    logits = np.where(masks, logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    logp = logits - lse
    probs = np.where(masks, np.exp(logp), 0.0)
    return logp, probs


def surrogate_and_grad(
    theta: np.ndarray,
    feats: np.ndarray,
    acts: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    masks: np.ndarray,
    eps: float,
) -> tuple[float, np.ndarray, dict]:
    """Clipped surrogate objective and its analytic gradient w.r.t. theta."""
    n = len(acts)
    logp, probs = _log_policy(theta, feats, masks)
    logp_a = logp[np.arange(n), acts]
    rho = np.exp(logp_a - logp_old)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
    objective = float(np.minimum(unclipped, clipped).mean())
    # the clipped branch is constant in theta, so those steps carry no gradient
    off = ((adv > 0) & (rho > 1.0 + eps)) | ((adv < 0) & (rho < 1.0 - eps))
    coef = np.where(off, 0.0, rho * adv)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), acts] = 1.0
    grad = (coef[:, None] * (onehot - probs)).T @ feats / n
    diagnostics = {
        "mean_ratio": float(rho.mean()),
        "clip_fraction": float(off.mean()),
        "surrogate": objective,
    }
    return objective, grad, diagnostics


def entropy_and_grad(theta: np.ndarray, feats: np.ndarray, masks: np.ndarray):
    logp, probs = _log_policy(theta, feats, masks)
    plogp = probs * np.where(probs > 0, logp, 0.0)
    ent = -plogp.sum(axis=1)
    dlogits = -(plogp + probs * ent[:, None])
    grad = dlogits.T @ feats / len(feats)
    return float(ent.mean()), grad


def ppo_update(
    params: PolicyParams, trajectories: list[Trajectory], config: PPOConfig
) -> tuple[PolicyParams, dict]:
    """Ascend the clipped surrogate plus entropy bonus with full-batch steps."""
    feats, acts, logp_old, masks, adv, _ = _flatten(trajectories)
    if not np.all(np.isfinite(adv)):
        return params, {"aborted": True}
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    theta = params.theta.copy()
    diagnostics: dict = {}
    for _ in range(config.update_epochs):
        _, grad, diagnostics = surrogate_and_grad(
            theta, feats, acts, logp_old, adv, masks, config.clip_epsilon
        )
        _, ent_grad = entropy_and_grad(theta, feats, masks)
        step = grad + config.entropy_coef * ent_grad
        if not np.all(np.isfinite(step)):
            diagnostics["aborted"] = True
            return params, diagnostics
        theta = theta + config.learning_rate * step
    new_params = PolicyParams(theta=theta, weights=dict(params.weights), mode=params.mode)
    return new_params, diagnostics


def value_update(
    value_params: ValueParams, trajectories: list[Trajectory], ridge: float = 1e-6
) -> tuple[ValueParams, float]:
    """One ridge solve of features onto GAE returns; returns (params, mse)."""
    feats = np.vstack([s.features for t in trajectories for s in t.steps])
    rets = np.concatenate([t.returns for t in trajectories])
    aug = np.hstack([feats, np.ones((len(feats), 1))])
    gram = aug.T @ aug + ridge * np.eye(aug.shape[1])
    try:
        sol = np.linalg.solve(gram, aug.T @ rets)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(aug, rets, rcond=None)
    new = ValueParams(w=sol[:-1], b=float(sol[-1]))
    preds = aug @ sol
    return new, float(np.mean((preds - rets) ** 2))


def train(
    initial: PolicyParams,
    env: Environment,
    interactions: list[Interaction],
    config: PPOConfig,
) -> tuple[PolicyParams, ValueParams, list[dict]]:
    """Full PPO loop; pure function of (initial params, corpus, config)."""
    rng = np.random.default_rng(config.seed)
    params = initial
    value_params = ValueParams()
    logs: list[dict] = []
    for iteration in range(1, config.iterations + 1):
        policy = LinearPolicy(params)
        trajs = collect_rollouts(
            policy, env, config.batch_episodes, rng, interactions, value_params
        )
        attach_gae(trajs, env.reward.gamma, config.gae_lambda)
        params, diag = ppo_update(params, trajs, config)
        value_params, value_loss = value_update(value_params, trajs, config.value_ridge)
        record = {
            "iter": iteration,
            "mean_return": float(np.mean([t.total_reward() for t in trajs])),
            "clip_frac": diag.get("clip_fraction", 0.0),
            "value_loss": value_loss,
            "per_family_ndcg10": None,
        }
        if config.log_every and iteration % config.log_every == 0:
            record["per_family_ndcg10"] = _family_diagnostics(
                env, interactions, params, config, iteration
            )
        logs.append(record)
    return params, value_params, logs


def _family_diagnostics(env, interactions, params, config: PPOConfig, iteration: int):
    """Greedy NDCG@10 on query-split episodes, reported per family."""
    from .environment import FAMILIES

    diag_rng = np.random.default_rng([config.seed, iteration])
    policy = LinearPolicy(params)
    out = {}
    for family_id in FAMILIES:
        scores = []
        for _ in range(config.diag_episodes_per_family):
            family = FAMILIES[family_id]
            episode = None
            for _ in range(200):
                user, target = env.sample_pair(diag_rng, interactions)
                from .environment import split_tag

                if split_tag(family_id, user, target) == "query":
                    episode = env.make_episode(user, target, family, split="query")
                    break
            if episode is None:
                continue
            traj = run_episode(env, episode, policy, greedy=True)
            scores.append(traj.final_ndcg10)
        out[family_id] = float(np.mean(scores)) if scores else None
    return out
