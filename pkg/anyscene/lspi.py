import numpy as np

from dataclasses import dataclass
from anyscene import log
from anyscene.metrics import auc, anytime_curve
from anyscene.policy import HORIZON, LinearPolicy, meta_features, meta_layout
from anyscene.policy import policy_init, rollout


@dataclass(frozen=True, eq=False)
class QSample(object):
    phi: np.ndarray
    value: float
    image: str
    step: int
    reward: float = None


@dataclass(frozen=True, eq=False)
class PolicyWeights(object):
    """ The coefficients of the linear Q estimate over the meta-features. """

    eta: np.ndarray
    layout: tuple = ()
    noise: float = 0.0
    pool: str = None
    iteration: int = 0

    def __post_init__(self):
        if self.layout:
            assert len(self.layout) == len(self.eta)

    def to_dict(self):
        return {
            'eta': self.eta.tolist(),
            'layout': list(self.layout),
            'noise': self.noise,
            'pool': self.pool,
            'iteration': self.iteration,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            eta=np.array(data['eta'], dtype=np.float64),
            layout=tuple(data['layout']),
            noise=data['noise'],
            pool=data['pool'],
            iteration=data['iteration'])


def clipped_returns(rewards, gamma):
    """ Q_t = R_t + gamma * max(Q_t+1, 0), with Q_T = R_T at the end. """

    values = [0.0] * len(rewards)
    following = None

    for t in reversed(range(len(rewards))):
        if following is None:
            values[t] = float(rewards[t])
        else:
            values[t] = float(rewards[t] + gamma * max(following, 0.0))

        following = values[t]

    return values


def policy_evaluate(policy, scenes, gamma, horizon=HORIZON):
    """ Rolls the policy out on each scene until the horizon or the first
    action without a positive reward, returning one Q sample per step.

    """
    assert 0 <= gamma <= 1

    samples = []

    for scene in scenes:
        trajectory = rollout(
            policy, scene, horizon=horizon, until_no_gain=True)

        rewards = [r.reward for r in trajectory.records]
        values = clipped_returns(rewards, gamma)

        for step, index in enumerate(trajectory.actions):
            previous = trajectory.states[step - 1] if step else None
            phi = meta_features(
                scene, trajectory.states[step], previous, policy.pool[index])

            samples.append(QSample(
                phi=phi,
                value=values[step],
                image=scene.name,
                step=step,
                reward=rewards[step]))

    return samples


def policy_improve(samples, beta, layout=(), pool=None):
    """ Solves the ridge regression of the Q targets on the meta-features,
    normalized by the number of samples.

    """
    assert samples, "at least one sample is required"
    assert beta > 0

    phi = np.array([s.phi for s in samples])
    values = np.array([s.value for s in samples])

    count = len(samples)
    system = phi.T @ phi / count + beta * np.eye(phi.shape[1])

    eta = np.linalg.solve(system, phi.T @ values / count)

    return PolicyWeights(eta=eta, layout=tuple(layout), pool=pool)


def validation_auc(pool, weights, scenes, horizon):
    policy = LinearPolicy(pool, weights)
    curve = anytime_curve(policy, scenes, horizon=horizon)

    return auc(curve) if len(curve.steps()) > 1 else curve.final.pixel


def lspi_train(pool, train, validation, gamma=0.9, beta=0.01, iterations=5,
               tolerance=1e-3, noise=0.1, horizon=HORIZON, seed=0):
    """ Least-squares policy iteration starting from the greedy behaviour
    policy. Returns the weights with the best validation AUC.

    """
    scene = train[0]
    layout = tuple(meta_layout(len(scene.registry), scene.tree.layers))

    samples = policy_evaluate(policy_init(pool), train, gamma, horizon)
    weights = policy_improve(samples, beta, layout, pool.digest)

    score = validation_auc(pool, weights, validation, horizon)
    best = (score, weights)

    log.info(f"LSPI initial pass: {len(samples)} samples, val AUC {score:.6f}")

    for iteration in range(1, iterations + 1):
        scale = noise / 2 ** (iteration - 1)
        behaviour = LinearPolicy(pool, weights, scale, seed + iteration)

        samples = policy_evaluate(behaviour, train, gamma, horizon)
        weights = PolicyWeights(
            eta=policy_improve(samples, beta).eta,
            layout=layout,
            noise=scale,
            pool=pool.digest,
            iteration=iteration)

        previous, score = score, validation_auc(
            pool, weights, validation, horizon)

        log.info((
            f"LSPI iteration {iteration}: {len(samples)} samples, "
            f"val AUC {score:.6f}"
        ))

        if score > best[0]:
            best = (score, weights)

        if abs(score - previous) < tolerance:
            break

    return best[1]
