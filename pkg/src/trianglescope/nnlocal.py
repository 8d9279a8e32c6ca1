"""Neural local models of the triangle network.

Each party is a small ReLU perceptron that maps the values of its two
sources to a softmax distribution over outcomes.  The induced joint
distribution is estimated by Monte Carlo over uniformly drawn sources, so
every network output is local by construction.

Gradients are computed by hand-written reverse-mode differentiation
through the Monte Carlo estimate, the loss, the softmax and the layers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dist_core import OutcomeDistribution, ValidationError
from .flags import PARTY_AXES, Flag, FlagModel

PARTIES = ("alice", "bob", "charlie")
HIDDEN_WIDTH = 30
HIDDEN_DEPTH = 4


class TrainingFailure(RuntimeError):
    """Raised when optimisation produces non-finite values."""


@dataclass
class PartyNetwork:
    """Affine layers with ReLU between them and softmax at the end."""

    weights: list  # weights[i] has shape (fan_in, fan_out)
    biases: list

    @classmethod
    def init(cls, rng: np.random.Generator, n_outcomes: int,
             hidden=(HIDDEN_WIDTH,) * HIDDEN_DEPTH, scale: float = 1.0) -> "PartyNetwork":
        sizes = [2, *hidden, n_outcomes]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = scale / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def n_outcomes(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list:
        return [*self.weights, *self.biases]

    def forward(self, inputs: np.ndarray, keep: bool = False):
        """Outcome probabilities for each row of ``inputs`` (shape ``(M, 2)``).

        Source values in ``[0, 1]`` are centred to ``[-1, 1]`` first.
        """
        h = 2.0 * np.asarray(inputs, dtype=float) - 1.0
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            cache.append(h)
        z = h - h.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        return (probs, cache) if keep else probs

    def backward(self, cache, probs: np.ndarray, grad_probs: np.ndarray):
        """Parameter gradients given ``dL/dprobs``."""
        # softmax: dL/dz = p * (g - <g, p>)
        g = probs * (grad_probs - (grad_probs * probs).sum(axis=1, keepdims=True))
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            gw[i] = h_in.T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (cache[i] > 0)
        return gw + gb

    def copy(self) -> "PartyNetwork":
        return PartyNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {"shapes": [list(w.shape) for w in self.weights],
                "weights": [w.ravel().tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, data) -> "PartyNetwork":
        weights = [np.array(w, dtype=float).reshape(s) for w, s in zip(data["weights"], data["shapes"])]
        biases = [np.array(b, dtype=float) for b in data["biases"]]
        net = cls(weights, biases)
        net.validate()
        return net

    def validate(self):
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise ValidationError("non-finite network parameters")
        if self.weights[0].shape[0] != 2:
            raise ValidationError("party networks take two source values")


@dataclass
class NeuralLocalModel:
    alice: PartyNetwork
    bob: PartyNetwork
    charlie: PartyNetwork

    def __post_init__(self):
        if len({net.n_outcomes for net in self.parties()}) != 1:
            raise ValidationError("party networks disagree on the number of outcomes")

    @property
    def n_outcomes(self) -> int:
        return self.alice.n_outcomes

    def parties(self):
        return (self.alice, self.bob, self.charlie)

    @classmethod
    def init(cls, rng, n_outcomes, hidden=(HIDDEN_WIDTH,) * HIDDEN_DEPTH,
             scale: float = 1.0) -> "NeuralLocalModel":
        return cls(*(PartyNetwork.init(rng, n_outcomes, hidden, scale) for _ in PARTIES))

    def parameters(self) -> list:
        return [p for net in self.parties() for p in net.parameters()]

    def set_parameters(self, flat: list):
        i = 0
        for net in self.parties():
            k = len(net.weights)
            net.weights = list(flat[i:i + k])
            net.biases = list(flat[i + k:i + 2 * k])
            i += 2 * k

    def copy(self) -> "NeuralLocalModel":
        return NeuralLocalModel(*(net.copy() for net in self.parties()))

    def to_json(self, extra: Optional[dict] = None) -> dict:
        data = {"n_outcomes": self.n_outcomes,
                "networks": {name: net.to_json() for name, net in zip(PARTIES, self.parties())}}
        if extra:
            data.update(extra)
        return data

    @classmethod
    def from_json(cls, data) -> "NeuralLocalModel":
        try:
            return cls(*(PartyNetwork.from_json(data["networks"][name]) for name in PARTIES))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed model JSON: {exc}") from exc


def sample_sources(m: int, seed) -> np.ndarray:
    """``(M, 3)`` array of independent uniform ``(alpha, beta, gamma)``."""
    rng = np.random.default_rng(seed)
    return rng.random((m, 3))


def _party_inputs(sources: np.ndarray):
    alpha, beta, gamma = sources[:, 0], sources[:, 1], sources[:, 2]
    return (np.column_stack([beta, gamma]),
            np.column_stack([gamma, alpha]),
            np.column_stack([alpha, beta]))


def _joint(pa, pb, pc) -> np.ndarray:
    m = pa.shape[0]
    return np.einsum("ia,ib,ic->abc", pa, pb, pc, optimize=True) / m


def monte_carlo_distribution(model: NeuralLocalModel, m: int, seed) -> OutcomeDistribution:
    sources = sample_sources(m, seed)
    pa, pb, pc = (net.forward(x) for net, x in zip(model.parties(), _party_inputs(sources)))
    joint = _joint(pa, pb, pc)
    return OutcomeDistribution(joint / joint.sum())


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class DistanceObjective:
    target: OutcomeDistribution

    kind = "distance"

    def value(self, p: np.ndarray) -> float:
        d = p - self.target.probs.astype(float)
        return float(np.sum(d * d))

    def grad(self, p: np.ndarray) -> np.ndarray:
        return 2.0 * (p - self.target.probs.astype(float))


@dataclass(frozen=True)
class InequalityObjective:
    """Loss ``-(w s111 - (1-w) Delta_l)`` on four outcomes."""

    w: float
    l: int  # noqa: E741

    kind = "inequality"

    def __post_init__(self):
        if self.l not in (1, 2):
            raise ValidationError("penalty exponent l must be 1 or 2")
        if not 0 <= self.w <= 1:
            raise ValidationError("w outside [0, 1]")

    def value(self, p: np.ndarray) -> float:
        from .inequalities import delta_penalty_array
        s111 = float(sum(p[k, k, k] for k in range(p.shape[0])))
        return -(self.w * s111 - (1 - self.w) * delta_penalty_array(p, self.l))

    def grad(self, p: np.ndarray) -> np.ndarray:
        from .inequalities import delta_penalty_grad
        g = (1 - self.w) * delta_penalty_grad(p, self.l)
        for k in range(p.shape[0]):
            g[k, k, k] -= self.w
        return g


def loss(p_nn: OutcomeDistribution, objective) -> float:
    if p_nn.n_outcomes != _objective_outcomes(objective, p_nn.n_outcomes):
        raise ValidationError("objective and distribution disagree on the number of outcomes")
    return objective.value(p_nn.probs.astype(float))


def _objective_outcomes(objective, default):
    if isinstance(objective, DistanceObjective):
        return objective.target.n_outcomes
    return 4


def _loss_and_grad(model: NeuralLocalModel, objective, sources: np.ndarray):
    inputs = _party_inputs(sources)
    outs = [net.forward(x, keep=True) for net, x in zip(model.parties(), inputs)]
    (pa, ca), (pb, cb), (pc, cc) = outs
    m = sources.shape[0]
    p = _joint(pa, pb, pc)
    value = objective.value(p)
    g = objective.grad(p) / m
    ga = np.einsum("abc,ib,ic->ia", g, pb, pc, optimize=True)
    gb = np.einsum("abc,ia,ic->ib", g, pa, pc, optimize=True)
    gc = np.einsum("abc,ia,ib->ic", g, pa, pb, optimize=True)
    grads = []
    for net, (probs, cache), gp in zip(model.parties(), outs, (ga, gb, gc)):
        grads.extend(net.backward(cache, probs, gp))
    return value, grads, p


def gradient(model: NeuralLocalModel, objective, m: int, seed):
    """Exact gradient of the Monte Carlo loss for a fixed sample set."""
    value, grads, _ = _loss_and_grad(model, objective, sample_sources(m, seed))
    if not (math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads)):
        raise TrainingFailure("non-finite gradient")
    return grads


def loss_at(model: NeuralLocalModel, objective, m: int, seed) -> float:
    sources = sample_sources(m, seed)
    pa, pb, pc = (net.forward(x) for net, x in zip(model.parties(), _party_inputs(sources)))
    return objective.value(_joint(pa, pb, pc))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    objective: object
    n_outcomes: int = 4
    n_samples: int = 2048
    epochs: int = 3000
    optimizer: str = "adam"  # or "adadelta"
    adam_lr: float = 3e-3
    adam_betas: tuple = (0.9, 0.999)
    lr_final_fraction: float = 0.1  # linear decay of the adam step over the epochs
    init_scale: float = 3.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    adadelta_lr: float = 1.0
    sgd_epochs: int = 500
    sgd_step: float = 1e-3
    restarts: int = 10
    seed: int = 0
    hidden: tuple = (HIDDEN_WIDTH,) * HIDDEN_DEPTH
    eval_samples: int = 0  # 0 means reuse n_samples
    stop_loss: Optional[float] = None  # stop all restarts once a model reaches this

    def __post_init__(self):
        if self.n_samples < 1 or self.restarts < 1:
            raise ValidationError("n_samples and restarts must be at least 1")
        if self.optimizer not in ("adam", "adadelta"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    def describe(self) -> dict:
        data = {k: v for k, v in asdict(self).items() if k != "objective"}
        data["hidden"] = list(self.hidden)
        data["adam_betas"] = list(self.adam_betas)
        obj = self.objective
        data["objective"] = ({"kind": "distance", "target": obj.target.to_json()}
                             if isinstance(obj, DistanceObjective)
                             else {"kind": "inequality", "w": obj.w, "l": obj.l})
        return data


@dataclass
class TrainResult:
    model: NeuralLocalModel
    loss: float
    best_restart: int
    history: list = field(default_factory=list)  # (epoch, restart, loss)
    restart_losses: list = field(default_factory=list)
    distribution: Optional[OutcomeDistribution] = None


def _epoch_seed(master: int, restart: int, epoch: int):
    return np.random.SeedSequence([master, restart, epoch])


def train_single(config: TrainConfig, restart: int):
    """One restart; returns (model, final loss, history rows)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, restart, 1 << 30]))
    model = NeuralLocalModel.init(rng, config.n_outcomes, config.hidden, config.init_scale)
    params = model.parameters()
    # first and second moment accumulators (adam), or squared gradient and step (adadelta)
    acc1 = [np.zeros_like(p) for p in params]
    acc2 = [np.zeros_like(p) for p in params]
    rho, eps = config.adadelta_rho, config.adadelta_eps
    b1, b2 = config.adam_betas
    history = []
    total = config.epochs + config.sgd_epochs
    for epoch in range(total):
        sources = sample_sources(config.n_samples, _epoch_seed(config.seed, restart, epoch))
        value, grads, _ = _loss_and_grad(model, config.objective, sources)
        if not (math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads)):
            raise TrainingFailure(f"non-finite loss or gradient at epoch {epoch}")
        history.append((epoch, restart, value))
        if config.stop_loss is not None and value <= config.stop_loss:
            break
        if epoch < config.epochs and config.optimizer == "adam":
            t = epoch + 1
            lr = config.adam_lr * (1 - (1 - config.lr_final_fraction) * epoch / config.epochs)
            for p, g, m1, m2 in zip(params, grads, acc1, acc2):
                m1 *= b1
                m1 += (1 - b1) * g
                m2 *= b2
                m2 += (1 - b2) * g * g
                p -= lr * (m1 / (1 - b1 ** t)) / (np.sqrt(m2 / (1 - b2 ** t)) + 1e-8)
        elif epoch < config.epochs:
            for p, g, eg, ex in zip(params, grads, acc1, acc2):
                eg *= rho
                eg += (1 - rho) * g * g
                step = -config.adadelta_lr * np.sqrt(ex + eps) / np.sqrt(eg + eps) * g
                ex *= rho
                ex += (1 - rho) * step * step
                p += step
        else:
            for p, g in zip(params, grads):
                p -= config.sgd_step * g
    eval_m = config.eval_samples or config.n_samples
    final = loss_at(model, config.objective, eval_m, _epoch_seed(config.seed, restart, total))
    if not math.isfinite(final):
        raise TrainingFailure("non-finite final loss")
    return model, final, history


def train(config: TrainConfig, threads: int = 1) -> TrainResult:
    """Independent restarts; keeps the restart with the lowest final loss."""
    results = []
    failures = 0

    def run(restart):
        try:
            return restart, train_single(config, restart)
        except TrainingFailure:
            return restart, None

    if threads > 1 and config.stop_loss is None:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, range(config.restarts)))
    else:
        outcomes = []
        for r in range(config.restarts):
            outcomes.append(run(r))
            res = outcomes[-1][1]
            if config.stop_loss is not None and res is not None and res[1] <= config.stop_loss:
                break
    history, losses = [], []
    for restart, res in sorted(outcomes, key=lambda t: t[0]):
        if res is None:
            failures += 1
            losses.append(math.nan)
            continue
        model, final, hist = res
        history.extend(hist)
        losses.append(final)
        results.append((final, restart, model))
    if not results:
        raise TrainingFailure("all restarts failed")
    final, restart, model = min(results, key=lambda t: (t[0], t[1]))
    eval_m = config.eval_samples or config.n_samples
    dist = monte_carlo_distribution(model, eval_m, _epoch_seed(config.seed, restart, 1 << 31))
    return TrainResult(model, final, restart, history, losses, dist)


def best_so_far(history) -> list:
    """Running minimum of the recorded losses in chronological order."""
    out, best = [], math.inf
    for _, _, value in history:
        best = min(best, value)
        out.append(best)
    return out


# ---------------------------------------------------------------------------
# discretisation and hand-built networks


def discretize_to_flags(model: NeuralLocalModel, resolution: int) -> FlagModel:
    """Deterministic flags by taking the most likely outcome at cell centres."""
    from fractions import Fraction

    if resolution < 2:
        raise ValidationError("resolution must be at least 2")
    n = model.n_outcomes
    centres = (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(centres, centres, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    breaks = [Fraction(i, resolution) for i in range(resolution + 1)]
    flags = []
    for name, net in zip(PARTIES, model.parties()):
        best = np.argmax(net.forward(grid), axis=1).reshape(resolution, resolution)
        cells = np.full((resolution, resolution, n), Fraction(0), dtype=object)
        for i in range(resolution):
            for j in range(resolution):
                cells[i, j, best[i, j]] = Fraction(1)
        flags.append(Flag(n, *PARTY_AXES[name], tuple(breaks), tuple(breaks), cells))
    return FlagModel(*flags)


def uniform_model(n_outcomes: int, hidden=(HIDDEN_WIDTH,) * HIDDEN_DEPTH, seed: int = 0):
    """Random hidden layers with a zero output layer: softmax of zeros."""
    model = NeuralLocalModel.init(np.random.default_rng(seed), n_outcomes, hidden)
    for net in model.parties():
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = 0.0
    return model


def constant_model(n_outcomes: int, outcome: int, hidden=(HIDDEN_WIDTH,) * HIDDEN_DEPTH,
                   strength: float = 200.0):
    """Every party outputs ``outcome`` (1-based) with saturated softmax."""
    model = uniform_model(n_outcomes, hidden)
    for net in model.parties():
        net.biases[-1][outcome - 1] = strength
    return model


def two_bit_table_network(table, n_outcomes: int, sharpness: float = 1e4,
                          strength: float = 200.0, depth: int = HIDDEN_DEPTH,
                          width: int = HIDDEN_WIDTH) -> PartyNetwork:
    """Network reproducing a response that depends on ``x >= 1/2`` and ``y >= 1/2``.

    ``table[(bx, by)]`` is the 1-based outcome for the two bits.  The first
    layer builds steep ramps, the second turns them into the two bits and
    their conjunction, the remaining hidden layers pass them through, and
    the output layer writes the indicator of each quadrant onto its logit.
    """
    if depth < 2 or width < 4:
        raise ValidationError("need at least two hidden layers of width 4")
    weights, biases = [], []
    # inputs arrive centred, so the threshold 1/2 sits at 0
    w1 = np.zeros((2, width))
    b1 = np.zeros(width)
    w1[0, 0], b1[0] = sharpness / 2, 0.0
    w1[0, 1], b1[1] = sharpness / 2, -1.0
    w1[1, 2], b1[2] = sharpness / 2, 0.0
    w1[1, 3], b1[3] = sharpness / 2, -1.0
    weights.append(w1)
    biases.append(b1)
    # bits: bx = r0 - r1, by = r2 - r3, both = relu(bx + by - 1)
    w2 = np.zeros((width, width))
    b2 = np.zeros(width)
    w2[0, 0], w2[1, 0] = 1, -1
    w2[2, 1], w2[3, 1] = 1, -1
    w2[0, 2], w2[1, 2], w2[2, 2], w2[3, 2], b2[2] = 1, -1, 1, -1, -1
    weights.append(w2)
    biases.append(b2)
    for _ in range(depth - 2):
        weights.append(np.eye(width))
        biases.append(np.zeros(width))
    wo = np.zeros((width, n_outcomes))
    bo = np.zeros(n_outcomes)
    # quadrant indicators as affine functions of (bx, by, both)
    indicator = {(0, 0): (np.array([-1, -1, 1]), 1.0), (1, 0): (np.array([1, 0, -1]), 0.0),
                 (0, 1): (np.array([0, 1, -1]), 0.0), (1, 1): (np.array([0, 0, 1]), 0.0)}
    for quadrant, outcome in table.items():
        coeffs, const = indicator[quadrant]
        wo[:3, outcome - 1] += strength * coeffs
        bo[outcome - 1] += strength * const
    weights.append(wo)
    biases.append(bo)
    return PartyNetwork(weights, biases)


SQUARES_TABLES = {
    "alice": {(0, 0): 1, (0, 1): 3, (1, 0): 4, (1, 1): 2},
    "bob": {(0, 0): 1, (0, 1): 4, (1, 0): 2, (1, 1): 3},
    "charlie": {(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 4},
}


def squares_model() -> NeuralLocalModel:
    return NeuralLocalModel(*(two_bit_table_network(SQUARES_TABLES[p], 4) for p in PARTIES))


def save_model(model: NeuralLocalModel, path, extra=None):
    with open(path, "w") as fh:
        json.dump(model.to_json(extra), fh)


def load_model(path) -> NeuralLocalModel:
    with open(path) as fh:
        return NeuralLocalModel.from_json(json.load(fh))


def history_csv(history) -> str:
    lines = ["epoch,restart,loss"]
    lines.extend(f"{e},{r},{v:.17g}" for e, r, v in history)
    return "\n".join(lines) + "\n"
