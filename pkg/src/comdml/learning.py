"""Toy local-loss split training on synthetic Gaussian-mixture data.

A small tanh MLP is cut after layer ``m``. The offloading agent trains the
prefix through an auxiliary linear head on its own loss; the helper trains
the suffix on the prefix activations, which are treated as constants (no
gradient flows back). Models are averaged with sample weights at the end of
each round.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from comdml.core import AgentProfile, PairingPlan, SplitProfile
from comdml.errors import EmptySample, ShapeMismatch
from comdml.profiler import LayerSpec, ModelSpec, profile_splits
from comdml.scheduler import greedy_pair

DEFAULT_SIZES = (16, 32, 32, 16, 2)


class SplitNet:
    """Dense tanh network with an optional split point and auxiliary head.

    ``weights[l]`` has shape (fan_in, fan_out). Every layer except the last
    applies tanh. With ``split_at = m >= 1`` layers ``0..m-1`` form the slow
    side and ``aux_w``/``aux_b`` map the slow-side output to class logits.
    """

    def __init__(self, weights, biases, split_at=0, aux_w=None, aux_b=None):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("weights and biases must be non-empty and equally long")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {l}: bias {b.shape} does not match weight {w.shape}")
            if l and w.shape[0] != self.weights[l - 1].shape[1]:
                raise ShapeMismatch(f"layer {l}: input width {w.shape[0]} != {self.weights[l - 1].shape[1]}")
        if not 0 <= split_at < len(self.weights):
            raise ShapeMismatch(f"split_at {split_at} outside 0..{len(self.weights) - 1}")
        self.split_at = split_at
        self.aux_w = None if aux_w is None else np.asarray(aux_w, dtype=np.float64)
        self.aux_b = None if aux_b is None else np.asarray(aux_b, dtype=np.float64)
        if split_at:
            if self.aux_w is None or self.aux_b is None:
                raise ShapeMismatch("a split net needs an auxiliary head")
            if self.aux_w.shape != (self.weights[split_at - 1].shape[1], self.num_classes):
                raise ShapeMismatch(f"aux head shape {self.aux_w.shape} does not fit split {split_at}")

    @classmethod
    def init(cls, sizes: Sequence[int] = DEFAULT_SIZES, rng: np.random.Generator | None = None,
             split_at: int = 0, zero_last: bool = True) -> "SplitNet":
        """Xavier-uniform hidden layers.

        With ``zero_last`` the output layer starts at zero so the untrained
        model predicts a single class.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for l, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero_last and l == len(sizes) - 2:
                weights.append(np.zeros((a, b)))
            else:
                lim = math.sqrt(6.0 / (a + b))
                weights.append(rng.uniform(-lim, lim, size=(a, b)))
            biases.append(np.zeros(b))
        net = cls(weights, biases)
        return net.with_split(split_at, rng) if split_at else net

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "SplitNet":
        return SplitNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.split_at,
            None if self.aux_w is None else self.aux_w.copy(),
            None if self.aux_b is None else self.aux_b.copy(),
        )

    def with_split(self, m: int, rng: np.random.Generator | None = None, aux=None) -> "SplitNet":
        """Copy with split point ``m``; aux head from ``aux`` or freshly zeroed."""
        net = self.copy()
        net.split_at = m
        if m == 0:
            net.aux_w = net.aux_b = None
            return net
        width = self.weights[m - 1].shape[1]
        if aux is not None:
            net.aux_w, net.aux_b = aux[0].copy(), aux[1].copy()
        else:
            net.aux_w = np.zeros((width, self.num_classes))
            net.aux_b = np.zeros(self.num_classes)
        if net.aux_w.shape != (width, self.num_classes):
            raise ShapeMismatch("aux head does not fit split")
        return net

    def _run(self, x, lo, hi):
        h = x
        for l in range(lo, hi):
            h = h @ self.weights[l] + self.biases[l]
            if l < self.num_layers - 1:
                h = np.tanh(h)
        return h

    def _check_input(self, x, layer):
        if x.ndim != 2 or x.shape[1] != self.weights[layer].shape[0]:
            raise ShapeMismatch(f"input shape {x.shape} does not fit layer {layer} ({self.weights[layer].shape[0]} wide)")

    def slow_forward(self, x: np.ndarray) -> np.ndarray:
        self._check_input(x, 0)
        return self._run(x, 0, self.split_at)

    def fast_forward(self, z: np.ndarray) -> np.ndarray:
        self._check_input(z, self.split_at)
        return self._run(z, self.split_at, self.num_layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._check_input(x, 0)
        return self._run(x, 0, self.num_layers)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(x), axis=1)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def chain_grads(weights, biases, x, y):
    """Mean cross-entropy of a tanh chain with a linear last layer, and its gradients."""
    acts = [x]
    h = x
    n = len(weights)
    for l in range(n):
        h = h @ weights[l] + biases[l]
        if l < n - 1:
            h = np.tanh(h)
        acts.append(h)
    logp = _log_softmax(h)
    loss = float(-logp[np.arange(len(y)), y].mean())
    delta = np.exp(logp)
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    gw, gb = [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ weights[l].T) * (1.0 - acts[l] ** 2)
    return loss, gw, gb


def _check_labels(net, x, y):
    if len(x) != len(y):
        raise ShapeMismatch(f"{len(x)} inputs but {len(y)} labels")
    if len(y) and (y.min() < 0 or y.max() >= net.num_classes):
        raise ShapeMismatch("label outside 0..C-1")


def slow_side_grads(net: SplitNet, x, y):
    if net.split_at < 1:
        raise ShapeMismatch("slow-side step needs split_at >= 1")
    _check_labels(net, x, y)
    net._check_input(x, 0)
    m = net.split_at
    return chain_grads(net.weights[:m] + [net.aux_w], net.biases[:m] + [net.aux_b], x, y)


def fast_side_grads(net: SplitNet, z, y):
    _check_labels(net, z, y)
    net._check_input(z, net.split_at)
    m = net.split_at
    return chain_grads(net.weights[m:], net.biases[m:], z, y)


def slow_side_step(net: SplitNet, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    """SGD step on layers 1..m and the aux head against the aux-head loss.

    Updates ``net`` in place and returns the batch loss before the update.
    """
    loss, gw, gb = slow_side_grads(net, x, y)
    m = net.split_at
    for l in range(m):
        net.weights[l] -= lr * gw[l]
        net.biases[l] -= lr * gb[l]
    net.aux_w -= lr * gw[m]
    net.aux_b -= lr * gb[m]
    return loss


def fast_side_step(net: SplitNet, z: np.ndarray, y: np.ndarray, lr: float) -> float:
    """SGD step on layers m+1..L given fixed slow-side activations ``z``."""
    loss, gw, gb = fast_side_grads(net, z, y)
    m = net.split_at
    for k, l in enumerate(range(m, net.num_layers)):
        net.weights[l] -= lr * gw[k]
        net.biases[l] -= lr * gb[k]
    return loss


def train_step(net: SplitNet, x: np.ndarray, y: np.ndarray, lr: float) -> float:
    """Ordinary end-to-end SGD step on the whole main path."""
    _check_labels(net, x, y)
    net._check_input(x, 0)
    loss, gw, gb = chain_grads(net.weights, net.biases, x, y)
    for l in range(net.num_layers):
        net.weights[l] -= lr * gw[l]
        net.biases[l] -= lr * gb[l]
    return loss


def aggregate(models: Sequence[tuple[SplitNet, float]]) -> list[SplitNet]:
    """Weighted coordinate-wise average of the main path.

    Returns one net per input, each carrying the averaged main layers.
    Auxiliary heads are averaged only among nets with the same split point.
    """
    if not models:
        return []
    ref = models[0][0]
    for net, w in models:
        if net.sizes != ref.sizes:
            raise ShapeMismatch(f"cannot average nets of sizes {net.sizes} and {ref.sizes}")
        if w < 0:
            raise ValueError("aggregation weights must be >= 0")
    total = float(sum(w for _, w in models))
    if total <= 0:
        raise ValueError("aggregation weights sum to zero")
    coef = [w / total for _, w in models]
    weights = [sum(c * net.weights[l] for c, (net, _) in zip(coef, models)) for l in range(ref.num_layers)]
    biases = [sum(c * net.biases[l] for c, (net, _) in zip(coef, models)) for l in range(ref.num_layers)]

    aux = {}
    for m in sorted({net.split_at for net, _ in models if net.split_at}):
        group = [(net, w) for net, w in models if net.split_at == m]
        gtot = float(sum(w for _, w in group))
        gc = [w / gtot if gtot > 0 else 1.0 / len(group) for _, w in group]
        aux[m] = (
            sum(c * net.aux_w for c, (net, _) in zip(gc, group)),
            sum(c * net.aux_b for c, (net, _) in zip(gc, group)),
        )
    out = []
    for net, _ in models:
        a = aux.get(net.split_at)
        out.append(SplitNet(
            [w.copy() for w in weights], [b.copy() for b in biases], net.split_at,
            None if a is None else a[0].copy(), None if a is None else a[1].copy(),
        ))
    return out


@dataclass
class SyntheticDataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    @classmethod
    def gaussian_mixture(cls, n: int, dim: int = 16, num_classes: int = 2,
                         separation: float = 2.0, seed: int = 0) -> "SyntheticDataset":
        """Balanced mixture with identity covariance.

        Class means are ``separation`` times a sign vector; with two classes
        they are exactly +separation*1 and -separation*1.
        """
        rng = np.random.default_rng([seed, 21])
        if num_classes == 2:
            signs = np.stack([np.ones(dim), -np.ones(dim)])
        else:
            signs = rng.choice([-1.0, 1.0], size=(num_classes, dim))
        y = np.arange(n) % num_classes
        rng.shuffle(y)
        x = separation * signs[y] + rng.standard_normal((n, dim))
        return cls(x=x, y=y.astype(np.int64), num_classes=num_classes)

    def __len__(self) -> int:
        return len(self.y)


def partition(data: SyntheticDataset, k: int, label_skew: float | None = None, seed: int = 0) -> list[np.ndarray]:
    """Split sample indices across ``k`` agents.

    ``label_skew=None`` deals an even IID split; otherwise each class is
    divided by Dirichlet(label_skew) proportions.
    """
    rng = np.random.default_rng([seed, 22])
    if label_skew is None:
        idx = rng.permutation(len(data))
        return [np.sort(p) for p in np.array_split(idx, k)]
    parts = [[] for _ in range(k)]
    for c in range(data.num_classes):
        idx = rng.permutation(np.flatnonzero(data.y == c))
        props = rng.dirichlet(np.full(k, label_skew))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
        for a, chunk in enumerate(np.split(idx, cuts)):
            parts[a].extend(chunk.tolist())
    return [np.sort(np.array(p, dtype=np.int64)) for p in parts]


@dataclass(frozen=True)
class DriftEstimate:
    round: int
    distance: float
    bins: int


def histogram_l1(a: np.ndarray, b: np.ndarray, bins: int = 32) -> float:
    """L1 distance between normalised histograms of two 1-D samples on a shared range."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySample("drift needs two non-empty samples")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    if lo == hi:
        return 0.0
    pa, _ = np.histogram(a, bins=bins, range=(lo, hi))
    pb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    return float(np.abs(pa / a.size - pb / b.size).sum())


def drift_estimate(slow_outputs_r: np.ndarray, slow_outputs_ref: np.ndarray, bins: int = 32, round: int = 0) -> DriftEstimate:
    """Empirical drift of the slow-side output distribution against a reference.

    Outputs are projected to their first coordinate before histogramming.
    """
    za = np.asarray(slow_outputs_r)
    zb = np.asarray(slow_outputs_ref)
    if za.size == 0 or zb.size == 0:
        raise EmptySample("drift needs two non-empty samples")
    za = za[:, 0] if za.ndim > 1 else za
    zb = zb[:, 0] if zb.ndim > 1 else zb
    return DriftEstimate(round=round, distance=histogram_l1(za, zb, bins), bins=bins)


def toy_model_spec(sizes: Sequence[int] = DEFAULT_SIZES, batch_size: int = 100,
                   aux_cost_frac: float = 0.02) -> ModelSpec:
    """Timing description of the toy MLP: cost ~ fan_in * fan_out."""
    layers = tuple(
        LayerSpec(name=f"dense{l}", cost=float(a * b), out_bytes=float(b * 8 * batch_size),
                  param_bytes=float((a + 1) * b * 8))
        for l, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
    )
    return ModelSpec(layers=layers, aux_cost_frac=aux_cost_frac, aux_out_classes=sizes[-1])


@dataclass
class LRSchedule:
    """Constant rate with decay on a loss plateau."""
    lr0: float = 0.001
    decay_factor: float = 0.2
    patience: int = 10
    min_delta: float = 1e-4
    lr: float = field(init=False)
    _best: float = field(init=False, default=math.inf)
    _stale: int = field(init=False, default=0)

    def __post_init__(self):
        self.lr = self.lr0

    def update(self, loss: float) -> float:
        if loss < self._best - self.min_delta:
            self._best = loss
            self._stale = 0
        else:
            self._stale += 1
            if self._stale >= self.patience:
                self.lr *= self.decay_factor
                self._stale = 0
        return self.lr


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    loss: float
    accuracy: float
    drift: float
    lr: float


@dataclass
class TrainingResult:
    """Per-round metrics; entry 0 is the untrained model."""
    history: list[RoundMetrics]
    plans: list[PairingPlan]
    drift: list[DriftEstimate]
    drift_split: int
    model: SplitNet


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def run_training(
    agents: Sequence[AgentProfile],
    net_template: SplitNet,
    data: SyntheticDataset,
    plan_source: str = "comdml",
    rounds: int = 50,
    lr: LRSchedule | float = 0.001,
    seed: int = 0,
    *,
    parts: Sequence[np.ndarray] | None = None,
    splits: Sequence[SplitProfile] | None = None,
    batch_size: int = 100,
    uniform_average: bool = False,
    drift_split: int | None = None,
    drift_bins: int = 32,
    probe_size: int = 512,
) -> TrainingResult:
    """Decentralized rounds of pairing, one local epoch and averaging.

    ``agents`` supply the timing profiles used for pairing; agent ``k`` owns
    ``parts[k]`` (an even IID split when omitted). Paired offloaders keep
    their prefix and the helper trains the suffix for them; the helper
    first runs its own epoch. ``drift_split`` fixes the slow-side cut used
    for the drift diagnostic (default: the most common paired split).
    """
    if plan_source not in ("comdml", "no_offload"):
        raise ValueError(f"plan_source must be 'comdml' or 'no_offload', got {plan_source!r}")
    sched = lr if isinstance(lr, LRSchedule) else LRSchedule(lr0=float(lr))
    agents = sorted(agents, key=lambda a: a.id)
    ids = [a.id for a in agents]
    parts = list(parts) if parts is not None else partition(data, len(agents), seed=seed)
    if len(parts) != len(agents):
        raise ShapeMismatch(f"{len(parts)} partitions for {len(agents)} agents")
    owned = dict(zip(ids, parts))
    if splits is None:
        splits = profile_splits(toy_model_spec(net_template.sizes, batch_size))

    g = net_template.with_split(0)
    aux_store: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    probe = data.x[: min(probe_size, len(data))]

    plans, probes = [], []
    history = []

    def evaluate(r):
        logits = g.forward(data.x)
        history.append(RoundMetrics(
            round=r,
            loss=cross_entropy(logits, data.y),
            accuracy=float((logits.argmax(axis=1) == data.y).mean()),
            drift=math.nan,
            lr=sched.lr,
        ))

    evaluate(0)
    probes.append(g)
    for r in range(1, rounds + 1):
        step = sched.lr
        if plan_source == "comdml":
            plan = greedy_pair(agents, splits)
        else:
            plan = PairingPlan(independents=tuple(ids))
        plans.append(plan)

        local: dict[int, SplitNet] = {}
        for i in ids:
            if i in plan.independents or any(f == i for _, f, _ in plan.pairs):
                rng = np.random.default_rng([seed, r, i])
                net = g.copy()
                xi, yi = data.x[owned[i]], data.y[owned[i]]
                for bidx in _batches(len(yi), batch_size, rng):
                    train_step(net, xi[bidx], yi[bidx], step)
                local[i] = net
        for s, _f, m in plan.pairs:
            rng = np.random.default_rng([seed, r, s])
            net = g.with_split(m, aux=aux_store.get(m))
            xs, ys = data.x[owned[s]], data.y[owned[s]]
            for bidx in _batches(len(ys), batch_size, rng):
                z = net.slow_forward(xs[bidx])
                slow_side_step(net, xs[bidx], ys[bidx], step)
                fast_side_step(net, z, ys[bidx], step)
            local[s] = net

        weights = [1.0 if uniform_average else float(len(owned[i])) for i in ids]
        merged = aggregate([(local[i], w) for i, w in zip(ids, weights)])
        for net in merged:
            if net.split_at:
                aux_store[net.split_at] = (net.aux_w, net.aux_b)
        g = merged[0].with_split(0)
        evaluate(r)
        sched.update(history[-1].loss)
        probes.append(g)

    if drift_split is None:
        used = Counter(m for p in plans for _, _, m in p.pairs)
        drift_split = used.most_common(1)[0][0] if used else 1
    ref = probes[-1].with_split(drift_split).slow_forward(probe)
    drift = [
        drift_estimate(p.with_split(drift_split).slow_forward(probe), ref, drift_bins, round=r)
        for r, p in enumerate(probes)
    ]
    history = [
        RoundMetrics(h.round, h.loss, h.accuracy, d.distance, h.lr) for h, d in zip(history, drift)
    ]
    return TrainingResult(history=history, plans=plans, drift=drift, drift_split=drift_split, model=g)
