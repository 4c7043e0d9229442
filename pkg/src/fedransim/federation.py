"""Client-side training loop and the central-server weighted-averaging loop.

Determinism contract: every source of randomness is a counter-based stream
keyed by (seed, client_id, round), so serial and parallel execution of the
clients produce bit-identical results, and aggregation always sums in
ascending client_id order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import LayerSpec, ModelParameters


class FederationError(RuntimeError):
    pass


class ClientAbstained(FederationError):
    def __init__(self, client_id: int, reason: str):
        super().__init__(f"client {client_id} abstained: {reason}")
        self.client_id = client_id


@dataclass
class TrainingConfig:
    rounds: int = 30
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.01
    loss_mode: str = "standard"  # "standard" or "weighted"
    seed: int = 0
    client_fraction: float = 1.0
    zero_count_policy: str = "cap"  # "cap" or "exclude"

    def validate(self) -> None:
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.loss_mode not in ("standard", "weighted"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if not (0.0 < self.client_fraction <= 1.0):
            raise ValueError("client_fraction must be in (0, 1]")
        if self.zero_count_policy not in ("cap", "exclude"):
            raise ValueError(f"unknown zero_count_policy {self.zero_count_policy!r}")


def compute_class_weights(class_counts, policy: str = "cap") -> np.ndarray:
    """Inverse class-frequency weights: alpha_j = max_q(count_q) / count_j.

    The most frequent class gets exactly 1; rarer classes get larger weights.
    Classes with zero local count follow `policy`: "cap" treats the count as 1
    (weight = max count), "exclude" drops the class from the local loss
    (weight 0).
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 0):
        raise ValueError("class counts must be non-negative and non-empty")
    max_count = counts.max()
    if max_count == 0:
        raise ValueError("all class counts are zero")
    weights = np.zeros_like(counts)
    nz = counts > 0
    weights[nz] = max_count / counts[nz]
    if policy == "cap":
        weights[~nz] = max_count
    elif policy == "exclude":
        weights[~nz] = 0.0
    else:
        raise ValueError(f"unknown zero-count policy {policy!r}")
    return weights


@dataclass
class ClientState:
    """One client site: its private data and identity."""

    client_id: int
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features/labels length mismatch")

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class ClientUpdate:
    client_id: int
    n_samples: int
    params: ModelParameters
    first_loss: float
    last_loss: float


@dataclass
class RoundRecord:
    round: int
    global_hash: str
    clients: list  # of dicts: client_id, n, weight, loss_first, loss_last


@dataclass
class FederationResult:
    global_params: ModelParameters
    history: list  # RoundRecord per round
    client_final: dict = field(default_factory=dict)  # client_id -> ModelParameters


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def client_update(
    state: ClientState,
    incoming: ModelParameters,
    cfg: TrainingConfig,
    round_index: int = 1,
) -> ClientUpdate:
    """One local training pass: adopt the incoming global model, shuffle the
    local data once with the (seed, client, round) stream, split into
    ceil(n/batch_size) batches, and run `epochs` passes of SGD over them.
    Bit-identical output for identical inputs and seed.
    """
    if state.n_samples == 0:
        raise ClientAbstained(state.client_id, "empty local dataset")
    if state.features.shape[1] != incoming.input_dim:
        raise nn.ShapeError(
            f"client {state.client_id}: feature dim {state.features.shape[1]} "
            f"!= model input {incoming.input_dim}"
        )
    weights = None
    if cfg.loss_mode == "weighted":
        weights = compute_class_weights(state.class_counts(), cfg.zero_count_policy)

    rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(state.client_id, round_index))
    )
    order = rng.permutation(state.n_samples)
    X = state.features[order]
    T = _one_hot(state.labels[order], state.num_classes)
    n_batches = -(-state.n_samples // cfg.batch_size)  # ceil; last batch short
    bounds = [
        (k * cfg.batch_size, min((k + 1) * cfg.batch_size, state.n_samples))
        for k in range(n_batches)
    ]

    # weight of each sample's true class; exactly 1.0 everywhere in standard
    # mode, so both modes run the identical float ops (bit-identical when the
    # weighted vector degenerates to all ones)
    sample_w = np.ones(state.n_samples) if weights is None else T @ weights

    Ws = [W.copy() for W in incoming.weights]
    bs = [b.copy() for b in incoming.biases]
    lr = cfg.learning_rate
    n_layers = len(Ws)
    total_steps = cfg.epochs * n_batches
    first_loss = last_loss = None
    step = 0
    for _ in range(cfg.epochs):
        for lo, hi in bounds:
            xb, tb, swb = X[lo:hi], T[lo:hi], sample_w[lo:hi]
            n = hi - lo
            acts = [xb]
            a = xb
            for l in range(n_layers):
                z = a @ Ws[l].T + bs[l]
                a = nn.softmax(z) if l == n_layers - 1 else np.maximum(z, 0.0)
                acts.append(a)
            step += 1
            if step == 1 or step == total_steps:
                p = np.clip(a, nn.LOG_CLAMP, 1.0)
                loss = float((swb * -(tb * np.log(p)).sum(axis=1)).mean())
                if step == 1:
                    first_loss = loss
                last_loss = loss
            delta = (a - tb) * (swb / n)[:, None]
            for l in range(n_layers - 1, -1, -1):
                grad_W = delta.T @ acts[l]
                grad_b = delta.sum(axis=0)
                if l > 0:
                    delta = (delta @ Ws[l]) * (acts[l] > 0.0)
                Ws[l] -= lr * grad_W
                bs[l] -= lr * grad_b
    params = nn.ModelParameters(Ws, bs, list(incoming.activations))
    return ClientUpdate(state.client_id, state.n_samples, params, first_loss, last_loss)


def fed_avg_aggregate(updates: list[ClientUpdate]) -> ModelParameters:
    """Sample-count-weighted average of client parameters.

    Updates are reordered by ascending client_id before summation so arrival
    order never matters. Computed as anchor + sum(w_i * (p_i - anchor)) so
    identical inputs (and K = 1) return the input exactly.
    """
    if not updates:
        raise FederationError("no client updates to aggregate")
    updates = sorted(updates, key=lambda u: u.client_id)
    base = updates[0]
    for u in updates[1:]:
        if not base.params.same_shape(u.params):
            raise FederationError(
                f"client {u.client_id} sent parameters of mismatched shape"
            )
        if u.n_samples < 1:
            raise FederationError(f"client {u.client_id} reports n_samples < 1")
    if len(updates) == 1:
        return base.params
    total = float(sum(u.n_samples for u in updates))
    avg_w = [np.array(W, dtype=np.float64) for W in base.params.weights]
    avg_b = [np.array(b, dtype=np.float64) for b in base.params.biases]
    for u in updates[1:]:
        w = u.n_samples / total
        for l in range(len(avg_w)):
            avg_w[l] += w * (u.params.weights[l] - base.params.weights[l])
            avg_b[l] += w * (u.params.biases[l] - base.params.biases[l])
    return ModelParameters(avg_w, avg_b, list(base.params.activations))


def aggregation_weights(updates: list[ClientUpdate]) -> np.ndarray:
    n = np.array([u.n_samples for u in sorted(updates, key=lambda u: u.client_id)], dtype=np.float64)
    return n / n.sum()


def run_federation(
    clients: list[ClientState],
    cfg: TrainingConfig,
    layers: list[LayerSpec],
    jobs: int = 1,
) -> FederationResult:
    """FedAvg over cfg.rounds rounds: broadcast the global model, collect all
    selected clients' updates, aggregate weighted by local sample counts.

    Parallel client execution (jobs > 1) is bit-identical to serial because
    each client/round owns an independent RNG stream.
    """
    cfg.validate()
    if not clients:
        raise FederationError("need at least one client")
    nn.validate_layers(layers)
    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    global_params = nn.init_params(layers, init_rng)

    history: list[RoundRecord] = []
    client_final: dict = {}
    for t in range(1, cfg.rounds + 1):
        selected = _select_clients(clients, cfg, t)

        def _run(c: ClientState) -> ClientUpdate:
            return client_update(c, global_params, cfg, round_index=t)

        if jobs > 1 and len(selected) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                updates = list(pool.map(_run, selected))
        else:
            updates = [_run(c) for c in selected]
        updates.sort(key=lambda u: u.client_id)
        global_params = fed_avg_aggregate(updates)
        total = float(sum(u.n_samples for u in updates))
        for u in updates:
            client_final[u.client_id] = u.params
            if not (np.isfinite(u.first_loss) and np.isfinite(u.last_loss)):
                raise FederationError(f"client {u.client_id} produced non-finite loss")
        history.append(
            RoundRecord(
                round=t,
                global_hash=nn.params_hash(global_params),
                clients=[
                    {
                        "client_id": u.client_id,
                        "n": u.n_samples,
                        "weight": u.n_samples / total,
                        "loss_first": u.first_loss,
                        "loss_last": u.last_loss,
                    }
                    for u in updates
                ],
            )
        )
    return FederationResult(global_params, history, client_final)


def _select_clients(clients, cfg: TrainingConfig, round_index: int):
    if cfg.client_fraction >= 1.0:
        return list(clients)
    k = max(1, int(round(cfg.client_fraction * len(clients))))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(round_index,)))
    picked = rng.choice(len(clients), size=k, replace=False)
    return [clients[i] for i in sorted(picked.tolist())]


def history_records(history: list[RoundRecord]) -> list[str]:
    """Round history as flat delimited records:
    round,client_id,loss_first,loss_last,n,weight,global_param_hash
    """
    lines = ["round,client_id,loss_first,loss_last,n,weight,global_param_hash"]
    for rec in history:
        for c in rec.clients:
            lines.append(
                f"{rec.round},{c['client_id']},{c['loss_first']!r},{c['loss_last']!r},"
                f"{c['n']},{c['weight']!r},{rec.global_hash}"
            )
    return lines
