"""Federated round loop: broadcast, local training, weighted aggregation.

Two entry points share every primitive. ``run_fednl`` runs the full
pipeline: per-participant noise estimation, server-assisted normalization,
then rounds aggregated with influence-based weights. ``run_fedavg`` is the
size-weighted baseline with none of that. With both pipeline stages disabled
and size weighting selected, run_fednl performs the exact same float
operations as run_fedavg, so the reduction is bitwise.
"""

from dataclasses import dataclass, replace

import numpy as np

from ._rng import ESTIMATE, EXCHANGE, SERVER_INIT, SERVER_SPLIT, TRAIN, derive_rng, derive_seed
from .contribution import (GAMMA_MIN, ContributionWeights, contributions, effective_sizes,
                           influence, size_weights)
from .data import Dataset
from .estimator import NoiseEstimate, estimate_noise
from .exchange import ExchangeTranscript, normalize_noise
from .metrics import MetricsSnapshot, evaluate
from .trainer import ModelParams, TrainerConfig, lr_at, steps_per_round, train_local


class AggregationError(ValueError):
    """Models cannot be aggregated (shape disagreement)."""


@dataclass(frozen=True)
class FederationConfig:
    """Everything one federated run depends on besides the datasets.

    ``weighting`` picks the aggregation rule: influence-based ("fednl") or
    proportional-to-size ("fedavg-size"). The two procedure flags gate noise
    estimation and server normalization; both on is the full pipeline.
    ``participant_seeds`` overrides the per-participant seed fan-out, letting
    callers permute participants together with their randomness.
    """

    n_participants: int
    rounds: int
    trainer: TrainerConfig
    seed: int
    run_procedure1: bool = True
    run_procedure2: bool = True
    weighting: str = "fednl"
    server_test_fraction: float = 0.2
    freeze_epsilon: bool = False
    literal_noise_adjustment: bool = False
    matrix_norm_influence: bool = False
    demand_cap: str = "size"
    per_class_resplit: bool = False
    gamma_min: float = GAMMA_MIN
    init_scale: float = 0.01
    participant_seeds: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_participants < 1:
            raise ValueError("n_participants must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if self.weighting not in ("fednl", "fedavg-size"):
            raise ValueError(f"weighting must be 'fednl' or 'fedavg-size', got {self.weighting!r}")
        if self.run_procedure2 and not self.run_procedure1:
            raise ValueError("normalization needs estimates; enable run_procedure1")
        if not 0.0 <= self.server_test_fraction < 1.0:
            raise ValueError("server_test_fraction must lie in [0, 1)")
        if self.participant_seeds is not None and len(self.participant_seeds) != self.n_participants:
            raise ValueError("participant_seeds must have one entry per participant")
        if self.gamma_min <= 0.0:
            raise ValueError("gamma_min must be positive")
        if self.init_scale < 0.0:
            raise ValueError("init_scale must be non-negative")


@dataclass(frozen=True)
class RoundRecord:
    """One aggregation round as it happened.

    ``epsilon`` is the weight vector actually used for this round's
    aggregate; ``gamma`` the influence values computed after it (None under
    size weighting). ``global_loss`` is the epsilon-weighted sum of local
    losses; metrics fields are None when no server test split exists.
    ``learning_rates`` holds each participant's rate at its first step of
    the round (they diverge only when training-set sizes do).
    """

    t: int
    learning_rates: tuple[float, ...]
    local_losses: tuple[float, ...]
    global_loss: float
    epsilon: tuple[float, ...]
    gamma: tuple[float, ...] | None
    cumulative_epochs: int
    global_accuracy: float | None
    global_macro_f1: float | None

    def __post_init__(self):
        if abs(sum(self.epsilon) - 1.0) > 1e-9:
            raise ValueError("recorded epsilon must sum to 1")


@dataclass(frozen=True)
class RunReport:
    """Full trace of one run: every round, final models, pipeline artifacts."""

    records: tuple[RoundRecord, ...]
    global_model: ModelParams
    local_models: tuple[ModelParams, ...]
    final_metrics: MetricsSnapshot | None
    estimates: tuple[NoiseEstimate, ...] | None
    transcripts: tuple[ExchangeTranscript, ...] | None
    training_sizes: tuple[int, ...]
    betas: tuple[float, ...]
    config: FederationConfig


def aggregate(models: list[ModelParams], weights: ContributionWeights) -> ModelParams:
    """Entrywise weighted sum of the local models."""
    if len(models) != len(weights):
        raise AggregationError(f"{len(models)} models but {len(weights)} weights")
    shape = models[0].weights.shape
    for i, m in enumerate(models):
        if m.weights.shape != shape:
            raise AggregationError(
                f"model {i} has shape {m.weights.shape}, expected {shape}")
    out = sum(weights.epsilon[i] * models[i].weights for i in range(len(models)))
    return ModelParams(weights=out, class_count=models[0].class_count)


def server_init(d: int, c: int, seed: int, scale: float = 0.01) -> ModelParams:
    """Initial global model: uniform entries in [-scale, scale]."""
    weights = derive_rng(seed, SERVER_INIT).uniform(-scale, scale, (d + 1, c))
    return ModelParams(weights=weights, class_count=c)


def split_server(server: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split the server data into (transfer pool, held-out test split)."""
    n_test = int(round(fraction * server.n))
    order = derive_rng(seed, SERVER_SPLIT).permutation(server.n)
    test = server.take(np.sort(order[:n_test]), name=f"{server.name}/test")
    pool = server.take(np.sort(order[n_test:]), name=f"{server.name}/pool")
    return pool, test


def _participant_seed(config: FederationConfig, i: int, tag: int, *extra: int) -> int:
    if config.participant_seeds is not None:
        return derive_seed(config.participant_seeds[i], tag, *extra)
    return derive_seed(config.seed, tag, *extra, i)


def _check_disjoint_ids(participant_datasets, server_dataset) -> None:
    seen: set[int] = set()
    groups = list(participant_datasets) + ([server_dataset] if server_dataset is not None else [])
    for ds in groups:
        ids = set(int(v) for v in ds.ids)
        clash = seen & ids
        if clash:
            raise ValueError(
                f"instance ids are shared across datasets: {sorted(clash)[:5]}; "
                "give each source its own id_base")
        seen |= ids


def _train_all(broadcast: ModelParams, train_sets, config: FederationConfig, t: int,
               step_bases: list[int]) -> tuple[list[ModelParams], list[float], list[float]]:
    """One round of local training; advances step_bases in place."""
    models, losses, rates = [], [], []
    for i, ds in enumerate(train_sets):
        cfg = replace(config.trainer, seed=_participant_seed(config, i, TRAIN, t))
        rates.append(lr_at(cfg.lr_schedule, step_bases[i] + 1))
        try:
            model, final_loss = train_local(broadcast, ds, cfg, global_step_base=step_bases[i])
        except Exception as e:
            raise type(e)(f"round {t}, participant {i}: {e}") from e
        step_bases[i] += steps_per_round(ds.n, cfg)
        models.append(model)
        losses.append(final_loss)
    return models, losses, rates


def _prepare_fednl(config: FederationConfig, participant_datasets, pool):
    """Run the pre-loop pipeline; return training sets, betas, artifacts."""
    train_sets, betas = [], []
    estimates, transcripts = [], []
    for i, ds in enumerate(participant_datasets):
        view = ds.training_view()
        if not config.run_procedure1:
            train_sets.append(view.in_space())
            betas.append(0.0)
            continue
        est = estimate_noise(view, config.trainer,
                             _participant_seed(config, i, ESTIMATE),
                             per_class_resplit=config.per_class_resplit)
        if config.run_procedure2:
            result = normalize_noise(view, est, pool,
                                     _participant_seed(config, i, EXCHANGE),
                                     config.trainer, demand_cap=config.demand_cap,
                                     per_class_resplit=config.per_class_resplit)
            train_sets.append(result.dataset)
            betas.append(result.estimate.beta_mean)
            estimates.append(result.estimate)
            transcripts.append(result.transcript)
        else:
            train_sets.append(view.by_ids(est.noise_free_ids))
            betas.append(est.beta_mean)
            estimates.append(est)
    return (train_sets, betas,
            tuple(estimates) if estimates else None,
            tuple(transcripts) if transcripts else None)


def run_fednl(config: FederationConfig, participant_datasets,
              server_dataset: Dataset | None = None) -> RunReport:
    """Noise-aware federated run.

    Estimation and normalization happen once, before the round loop. Each
    round every participant trains from the broadcast model, the server
    aggregates with the weights in effect (uniform in round 1; influence
    history sets later rounds unless frozen), and influence is updated
    against this round's own aggregate.
    """
    datasets = list(participant_datasets)
    n = config.n_participants
    if len(datasets) != n:
        raise ValueError(f"config says {n} participants, got {len(datasets)} datasets")
    _check_disjoint_ids(datasets, server_dataset)
    needs_server = config.run_procedure2 or config.weighting == "fednl"
    if needs_server and server_dataset is None:
        raise ValueError("this configuration needs a server dataset")
    pool = test = None
    if server_dataset is not None:
        pool, test = split_server(server_dataset, config.server_test_fraction, config.seed)
        if config.weighting == "fednl" and test.n == 0:
            raise ValueError("influence weighting needs a non-empty server test split")

    train_sets, betas, estimates, transcripts = _prepare_fednl(config, datasets, pool)
    sizes = [ds.n for ds in train_sets]
    m_sizes = effective_sizes(sizes, betas,
                              literal_noise_adjustment=config.literal_noise_adjustment)

    d, c = datasets[0].d, datasets[0].class_count
    broadcast = server_init(d, c, config.seed, config.init_scale)
    gammas = [config.gamma_min] * n
    if config.weighting == "fednl":
        eps = contributions(gammas)
    else:
        eps = size_weights(sizes)

    records: list[RoundRecord] = []
    snapshot = None
    local_models: list[ModelParams] = []
    step_bases = [0] * n
    for t in range(1, config.rounds + 1):
        local_models, local_losses, rates = _train_all(broadcast, train_sets, config, t,
                                                       step_bases)
        agg = aggregate(local_models, eps)
        global_loss = float(np.dot(eps.epsilon, local_losses))
        if test is not None and test.n:
            snapshot = evaluate(agg, test, scope="global")
        gamma_rec = None
        if config.weighting == "fednl":
            if n >= 2:
                states = [
                    influence(i, local_models, m_sizes, agg, test, gammas[i], rates[i],
                              config.trainer, gamma_min=config.gamma_min,
                              matrix_norm=config.matrix_norm_influence)
                    for i in range(n)
                ]
                gammas = [st.gamma for st in states]
            gamma_rec = tuple(gammas)
        records.append(RoundRecord(
            t=t,
            learning_rates=tuple(rates),
            local_losses=tuple(local_losses),
            global_loss=global_loss,
            epsilon=tuple(float(v) for v in eps.epsilon),
            gamma=gamma_rec,
            cumulative_epochs=t * config.trainer.local_epochs,
            global_accuracy=None if snapshot is None else snapshot.accuracy,
            global_macro_f1=None if snapshot is None else snapshot.macro_f1,
        ))
        broadcast = agg
        if config.weighting == "fednl" and not config.freeze_epsilon and n >= 2:
            eps = contributions(gammas)

    return RunReport(
        records=tuple(records),
        global_model=broadcast,
        local_models=tuple(local_models),
        final_metrics=snapshot,
        estimates=estimates,
        transcripts=transcripts,
        training_sizes=tuple(sizes),
        betas=tuple(betas),
        config=config,
    )


def run_fedavg(config: FederationConfig, participant_datasets,
               server_dataset: Dataset | None = None) -> RunReport:
    """Size-weighted baseline: no estimation, no exchange, no influence.

    The optional server dataset is split exactly as in run_fednl and used
    only for per-round evaluation, so paired comparisons score both
    algorithms on the same held-out split.
    """
    datasets = list(participant_datasets)
    n = config.n_participants
    if len(datasets) != n:
        raise ValueError(f"config says {n} participants, got {len(datasets)} datasets")
    _check_disjoint_ids(datasets, server_dataset)
    test = None
    if server_dataset is not None:
        _, test = split_server(server_dataset, config.server_test_fraction, config.seed)

    train_sets = [ds.training_view().in_space() for ds in datasets]
    sizes = [ds.n for ds in train_sets]
    eps = size_weights(sizes)

    d, c = datasets[0].d, datasets[0].class_count
    broadcast = server_init(d, c, config.seed, config.init_scale)
    records: list[RoundRecord] = []
    snapshot = None
    local_models: list[ModelParams] = []
    step_bases = [0] * n
    for t in range(1, config.rounds + 1):
        local_models, local_losses, rates = _train_all(broadcast, train_sets, config, t,
                                                       step_bases)
        agg = aggregate(local_models, eps)
        global_loss = float(np.dot(eps.epsilon, local_losses))
        if test is not None and test.n:
            snapshot = evaluate(agg, test, scope="global")
        records.append(RoundRecord(
            t=t,
            learning_rates=tuple(rates),
            local_losses=tuple(local_losses),
            global_loss=global_loss,
            epsilon=tuple(float(v) for v in eps.epsilon),
            gamma=None,
            cumulative_epochs=t * config.trainer.local_epochs,
            global_accuracy=None if snapshot is None else snapshot.accuracy,
            global_macro_f1=None if snapshot is None else snapshot.macro_f1,
        ))
        broadcast = agg

    return RunReport(
        records=tuple(records),
        global_model=broadcast,
        local_models=tuple(local_models),
        final_metrics=snapshot,
        estimates=None,
        transcripts=None,
        training_sizes=tuple(sizes),
        betas=tuple(0.0 for _ in range(n)),
        config=config,
    )


def record_to_dict(record: RoundRecord) -> dict:
    return {
        "t": record.t,
        "learning_rates": list(record.learning_rates),
        "local_losses": list(record.local_losses),
        "global_loss": record.global_loss,
        "epsilon": list(record.epsilon),
        "gamma": None if record.gamma is None else list(record.gamma),
        "cumulative_epochs": record.cumulative_epochs,
        "global_accuracy": record.global_accuracy,
        "global_macro_f1": record.global_macro_f1,
    }
