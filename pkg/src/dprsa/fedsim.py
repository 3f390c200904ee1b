"""Parameter-server round engine and data partitioners.

One round follows the DP-RSA loop literally: the master broadcasts ``x0``;
each regular worker forms its wire message from its *current* local model,
then draws a minibatch and updates locally; Byzantine workers craft messages
from a snapshot of the round; the master aggregates.

Workers ``0 .. r-1`` are regular and ``r .. K-1`` are Byzantine.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import aggregation as agg
from . import dp
from .attacks import AttackSpec, ByzantineContext, craft
from .data import Dataset
from .errors import ConfigError, InvalidInputError
from .metrics import (
    MoreauConfig,
    dataset_loss,
    eval_accuracy,
    moreau_grad_norm_sq,
    stack_point,
    stacked_objective,
)
from .paramcore import ClipConfig, LinearModel, MlpModel, clip_grad, reg_grad, sign_vec
from .rng import MASTER, Purpose, stream

ALGORITHMS = ("sgd", "signsgd", "sgd_gm", "rsa", "dp_rsa_flip", "dp_rsa_gauss")
RSA_FAMILY = ("rsa", "dp_rsa_flip", "dp_rsa_gauss")


@dataclass(frozen=True)
class SimConfig:
    num_workers: int = 10
    num_byzantine: int = 0
    algorithm: str = "dp_rsa_gauss"
    alpha: float = 0.01
    lam: float = 0.01
    epsilon: Optional[float] = 0.4
    # Flip only: use this keep probability instead of calibrating from epsilon.
    gamma: Optional[float] = None
    sigma_margin: float = 0.05
    attack: AttackSpec = field(default_factory=AttackSpec)
    partition: str = "iid"
    group_size: int = 3
    batch_size: int = 1
    rounds: int = 100
    seed: int = 0
    clip_norm: float = 1.0
    reg_coeff: float = 0.002
    eval_every: int = 50
    model: str = "linear"
    hidden_dim: int = 50
    gm_tol: float = 1e-8
    gm_max_iter: int = 1000
    moreau_every: int = 0
    moreau_rho_bar: float = 1.0
    moreau_tol: float = 1e-8
    moreau_max_iter: int = 20000

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ConfigError("; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if self.algorithm not in ALGORITHMS:
            out.append(f"algorithm must be one of {ALGORITHMS}")
        if self.num_workers < 1:
            out.append("num_workers must be >= 1")
        if not 0 <= self.num_byzantine < self.num_workers:
            out.append("num_byzantine must satisfy 0 <= b < num_workers")
        if self.rounds < 1:
            out.append("rounds must be >= 1")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.eval_every < 1:
            out.append("eval_every must be >= 1")
        if not (self.alpha > 0 and self.lam > 0):
            out.append("alpha and lam must be positive")
        if not self.clip_norm > 0:
            out.append("clip_norm must be positive")
        if self.reg_coeff < 0:
            out.append("reg_coeff must be nonnegative")
        if self.partition not in ("iid", "noniid"):
            out.append("partition must be 'iid' or 'noniid'")
        elif self.partition == "noniid" and (
            self.group_size < 1 or self.num_workers % self.group_size
        ):
            out.append("group_size must divide num_workers")
        if self.model not in ("linear", "mlp"):
            out.append("model must be 'linear' or 'mlp'")
        if self.algorithm == "dp_rsa_gauss":
            if self.epsilon is None or not 0 < self.epsilon < dp.GAUSS_EPSILON_MAX:
                out.append("dp_rsa_gauss needs epsilon in (0, 8)")
        if self.algorithm == "dp_rsa_flip":
            if self.gamma is not None:
                if not 0.5 <= self.gamma <= 1.0:
                    out.append("gamma must lie in [0.5, 1]")
            elif self.epsilon is None or not self.epsilon > 0:
                out.append("dp_rsa_flip needs epsilon > 0 or an explicit gamma")
        if self.attack.kind == "sample_duplicate" and self.num_byzantine > 0:
            if self.attack.victim_index >= self.num_workers - self.num_byzantine:
                out.append("attack.victim_index must reference a regular worker")
        if self.moreau_every < 0:
            out.append("moreau_every must be >= 0")
        return out

    @property
    def num_regular(self) -> int:
        return self.num_workers - self.num_byzantine


@dataclass
class SimState:
    round: int
    x0: np.ndarray
    # Regular workers' local models; empty for gradient baselines.
    local_models: tuple = ()


@dataclass
class RoundLog:
    round: int
    train_loss: float
    test_accuracy: Optional[float]
    epsilon_round: float
    wall_ms: float
    mechanism_calls: int
    moreau_grad_sq: Optional[float] = None


@dataclass
class RunMetrics:
    config: SimConfig
    logs: list
    final_x0: np.ndarray
    final_train_loss: float
    final_accuracy: float
    epsilon_round: float
    private: bool

    @property
    def epsilon_total_naive(self) -> float:
        """Per-round budget times rounds; a loose upper bound on the whole run."""
        return self.epsilon_round * len(self.logs)


def partition_iid(n_samples: int, num_workers: int, rng: np.random.Generator) -> list:
    """Random permutation split into shards whose sizes differ by at most one."""
    if n_samples < num_workers:
        raise InvalidInputError("need at least one sample per worker")
    return [np.sort(s) for s in np.array_split(rng.permutation(n_samples), num_workers)]


def partition_noniid(labels, num_workers: int, group_size: int, rng: np.random.Generator) -> list:
    """Half of every class goes evenly to all workers, the other half to one group.

    Workers form ``num_workers // group_size`` consecutive groups and class ``c``
    belongs to group ``c mod num_groups``.
    """
    labels = np.asarray(labels)
    if group_size < 1 or num_workers % group_size:
        raise InvalidInputError("group_size must divide num_workers")
    num_groups = num_workers // group_size
    classes = np.unique(labels)
    if classes.size < num_groups:
        raise InvalidInputError(
            f"{classes.size} classes cannot cover {num_groups} worker groups"
        )
    shards = [[] for _ in range(num_workers)]
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        half = idx.size // 2
        for k, part in enumerate(np.array_split(idx[:half], num_workers)):
            shards[k].append(part)
        g = int(c) % num_groups
        for j, part in enumerate(np.array_split(idx[half:], group_size)):
            shards[g * group_size + j].append(part)
    return [np.sort(np.concatenate(s)) for s in shards]


def build_model(config: SimConfig, input_dim: int, num_classes: int):
    if config.model == "mlp":
        return MlpModel(input_dim, config.hidden_dim, num_classes)
    return LinearModel(input_dim, num_classes)


class Simulation:
    """Immutable round engine: configuration, model, data shards and test set.

    ``threads > 1`` evaluates regular workers on a thread pool; results are
    gathered in worker-index order, so output does not depend on scheduling.
    """

    def __init__(self, config: SimConfig, train: Dataset, test: Dataset, threads: int = 1):
        self.config = config
        self.train = train
        self.test = test
        self.threads = threads
        self.model = build_model(config, train.dim, train.num_classes)
        self.clip = ClipConfig(config.clip_norm)
        self.rsa = agg.RsaConfig(lam=config.lam, alpha=config.alpha)
        prng = stream(config.seed, MASTER, 0, Purpose.PARTITION)
        if config.partition == "iid":
            shards = partition_iid(len(train), config.num_workers, prng)
        else:
            shards = partition_noniid(train.labels, config.num_workers, config.group_size, prng)
        self.shards = shards
        self.regular_data = [train.subset(s) for s in shards[: config.num_regular]]
        self._flip = None
        self._budget = None
        if config.algorithm == "dp_rsa_flip":
            self._flip = (
                dp.FlipMechanism(config.gamma)
                if config.gamma is not None
                else dp.calibrate_gamma(dp.PrivacyBudget(config.epsilon))
            )
        elif config.algorithm == "dp_rsa_gauss":
            self._budget = dp.PrivacyBudget(config.epsilon)
            self._sens = dp.Sensitivity.from_clipping(config.alpha, config.clip_norm)

    @property
    def is_rsa(self) -> bool:
        return self.config.algorithm in RSA_FAMILY

    @property
    def epsilon_round(self) -> float:
        if self._flip is not None:
            return dp.exact_flip_pl(self._flip)
        if self._budget is not None:
            return self._budget.epsilon
        return math.inf

    def initial_state(self) -> SimState:
        x0 = self.model.init_params(stream(self.config.seed, MASTER, 0, Purpose.INIT))
        locals_ = tuple(x0.copy() for _ in range(self.config.num_regular)) if self.is_rsa else ()
        return SimState(0, x0, locals_)

    def _minibatch(self, k: int, t: int):
        data = self.regular_data[k]
        rng = stream(self.config.seed, k, t, Purpose.MINIBATCH)
        idx = rng.integers(0, len(data), size=self.config.batch_size)
        return data.features[idx], data.labels[idx]

    def _wire_message(self, k: int, t: int, u: np.ndarray):
        """Worker k's transmitted sign vector for ``u = x0 - xk``, and the number of mechanism calls."""
        algo = self.config.algorithm
        if algo == "rsa":
            return sign_vec(u), 0
        rng = stream(self.config.seed, k, t, Purpose.MECHANISM)
        if algo == "dp_rsa_flip":
            return dp.flip_perturb(sign_vec(u), self._flip, rng), 1
        mech = dp.calibrate_sigma(
            self._budget, self._sens, float(np.max(np.abs(u))), self.config.sigma_margin
        )
        return dp.gauss_perturb(u, mech, rng), 1

    def _regular_step(self, k: int, state: SimState):
        """Message, minibatch loss, clipped gradient, updated local model (RSA only) and mechanism calls of worker k."""
        t, x0 = state.round, state.x0
        x, y = self._minibatch(k, t)
        if self.is_rsa:
            xk = state.local_models[k]
            msg, calls = self._wire_message(k, t, x0 - xk)
            loss, g = self.model.loss_and_grad(xk, x, y)
            g = clip_grad(g, self.clip)
            return msg, loss, g, agg.rsa_worker_update(xk, g, x0, self.rsa), calls
        loss, g = self.model.loss_and_grad(x0, x, y)
        g = clip_grad(g, self.clip)
        msg = sign_vec(g) if self.config.algorithm == "signsgd" else g
        return msg, loss, g, None, 0

    def _byzantine_messages(self, state: SimState, messages, grads) -> list:
        cfg = self.config
        if cfg.num_byzantine == 0 or cfg.attack.kind == "none":
            return []
        models = list(state.local_models) if self.is_rsa else [state.x0] * cfg.num_regular
        ctx = ByzantineContext(state.x0, tuple(messages), tuple(models), tuple(grads))
        target = "model" if self.is_rsa else "gradient"
        out = []
        for j in range(cfg.num_regular, cfg.num_workers):
            rng = stream(cfg.seed, j, state.round, Purpose.ATTACK)
            raw = craft(cfg.attack, ctx, target, rng)
            if cfg.attack.kind == "sample_duplicate":
                out.append(raw)
            elif self.is_rsa:
                # Byzantine workers skip the mechanism; a perturbed sign of an
                # arbitrary vector is no different from an arbitrary sign.
                out.append(sign_vec(state.x0 - raw))
            elif cfg.algorithm == "signsgd":
                out.append(sign_vec(raw))
            else:
                out.append(raw)
        return out

    def _master_step(self, x0, messages) -> np.ndarray:
        cfg = self.config
        grad_f0 = reg_grad(x0, cfg.reg_coeff)
        if self.is_rsa:
            return agg.rsa_master_update(x0, grad_f0, messages, self.rsa)
        if cfg.algorithm == "sgd":
            direction = agg.mean_aggregate(messages)
        elif cfg.algorithm == "signsgd":
            direction = agg.sign_majority_aggregate(messages)
        else:
            direction = agg.geometric_median(messages, cfg.gm_tol, cfg.gm_max_iter)
        return x0 - cfg.alpha * (direction + grad_f0)

    def run_round(self, state: SimState):
        start = time.perf_counter()
        workers = range(self.config.num_regular)
        step = lambda k: self._regular_step(k, state)  # noqa: E731
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(step, workers))
        else:
            results = [step(k) for k in workers]
        messages = [r[0] for r in results]
        grads = [r[2] for r in results]
        loss = float(np.mean([r[1] for r in results]))
        byz = self._byzantine_messages(state, messages, grads)
        x0_new = self._master_step(state.x0, messages + byz)
        locals_new = tuple(r[3] for r in results) if self.is_rsa else ()
        new_state = SimState(state.round + 1, x0_new, locals_new)

        t = state.round
        last = t + 1 == self.config.rounds
        acc = None
        if (t + 1) % self.config.eval_every == 0 or last:
            acc = eval_accuracy(self.model, x0_new, self.test)
        moreau = None
        me = self.config.moreau_every
        if me and ((t + 1) % me == 0 or last):
            moreau = self.moreau_diagnostic(new_state)
        calls = sum(r[4] for r in results)
        log = RoundLog(
            round=t,
            train_loss=loss,
            test_accuracy=acc,
            epsilon_round=self.epsilon_round,
            wall_ms=1000.0 * (time.perf_counter() - start),
            mechanism_calls=calls,
            moreau_grad_sq=moreau,
        )
        return new_state, log

    def moreau_diagnostic(self, state: SimState) -> float:
        cfg = self.config
        locals_ = state.local_models or tuple(state.x0 for _ in range(cfg.num_regular))
        point = stack_point(locals_, state.x0)
        mcfg = MoreauConfig(
            rho_bar=cfg.moreau_rho_bar,
            inner_tol=cfg.moreau_tol,
            inner_max_iter=cfg.moreau_max_iter,
            gamma_weight=self._gamma_weight(),
        )
        objective = stacked_objective(self.model, self.regular_data, mcfg, self.rsa, cfg.reg_coeff)
        return moreau_grad_norm_sq(point, mcfg, objective)

    def _gamma_weight(self) -> float:
        # Weight of the consensus penalty in the stationarity objective: the
        # keep probability for Flip, 1 otherwise.
        return self._flip.gamma if self._flip is not None else 1.0

    def run(self) -> RunMetrics:
        state = self.initial_state()
        logs = []
        for _ in range(self.config.rounds):
            state, log = self.run_round(state)
            logs.append(log)
        union = Dataset(
            np.concatenate([d.features for d in self.regular_data]),
            np.concatenate([d.labels for d in self.regular_data]),
            self.train.num_classes,
        )
        return RunMetrics(
            config=self.config,
            logs=logs,
            final_x0=state.x0,
            final_train_loss=dataset_loss(self.model, state.x0, union),
            final_accuracy=logs[-1].test_accuracy,
            epsilon_round=self.epsilon_round,
            private=self.config.algorithm.startswith("dp_") and math.isfinite(self.epsilon_round),
        )


def run_round(sim: Simulation, state: SimState):
    return sim.run_round(state)


def run_training(config: SimConfig, train: Dataset, test: Dataset, threads: int = 1) -> RunMetrics:
    return Simulation(config, train, test, threads=threads).run()


def with_overrides(config: SimConfig, **changes) -> SimConfig:
    return replace(config, **changes)
