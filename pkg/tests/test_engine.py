"""Federation round loop, aggregation, and the size-weighted baseline."""

import numpy as np
import pytest

from fednl import (
    AggregationError,
    Constant,
    ContributionWeights,
    Diminishing,
    FederationConfig,
    ModelParams,
    ShuffleSplit,
    TrainerConfig,
    aggregate,
    partition_non_iid,
    record_to_dict,
    run_fedavg,
    run_fednl,
    server_init,
    split_server,
    synth_gaussian,
    train_local,
)
from fednl._rng import TRAIN, derive_seed


def weights_of(values, c=2):
    return ModelParams(np.asarray(values, dtype=np.float64), c)


def make_parts(seed, c=3, per_class=40, n_parts=4, sep=8.0):
    base = synth_gaussian(c, per_class, 2, sep, seed=seed)
    return partition_non_iid(base, n_parts, seed=seed, strategy=ShuffleSplit())


# ---------------------------------------------------------------- aggregate

def test_aggregate_degenerate_weight():
    models = [weights_of([[1.0, 2.0]]), weights_of([[5.0, 5.0]])]
    out = aggregate(models, ContributionWeights(np.array([1.0, 0.0])))
    np.testing.assert_allclose(out.weights, models[0].weights)


def test_aggregate_identical_models():
    w = [[0.5, -0.5], [1.0, 0.0]]
    models = [weights_of(w) for _ in range(3)]
    out = aggregate(models, ContributionWeights(np.array([0.2, 0.5, 0.3])))
    np.testing.assert_allclose(out.weights, w)


def test_aggregate_matches_direct_arithmetic():
    a = weights_of([[1.0, 0.0], [2.0, -2.0]])
    b = weights_of([[3.0, 4.0], [0.0, 1.0]])
    out = aggregate([a, b], ContributionWeights(np.array([0.25, 0.75])))
    np.testing.assert_allclose(
        out.weights, 0.25 * a.weights + 0.75 * b.weights, atol=1e-12
    )


def test_aggregate_shape_mismatch():
    a = weights_of([[1.0, 0.0]])
    b = ModelParams(np.zeros((2, 2)), 2)
    with pytest.raises(AggregationError):
        aggregate([a, b], ContributionWeights(np.array([0.5, 0.5])))


# ---------------------------------------------------------------- server utils

def test_server_init_deterministic_and_bounded():
    a = server_init(4, 3, seed=1, scale=0.01)
    b = server_init(4, 3, seed=1, scale=0.01)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.weights.shape == (5, 3)
    assert np.abs(a.weights).max() <= 0.01


def test_split_server_fraction_and_disjoint():
    server = synth_gaussian(3, 50, 2, 6.0, seed=2)
    pool, test = split_server(server, 0.2, seed=2)
    assert test.n == 30
    assert pool.n == 120
    assert set(pool.ids.tolist()).isdisjoint(test.ids.tolist())
    assert set(pool.ids.tolist()) | set(test.ids.tolist()) == set(server.ids.tolist())


# ---------------------------------------------------------------- degenerate

def test_single_participant_equals_local_training():
    parts = make_parts(3, n_parts=1)
    trainer = TrainerConfig(local_epochs=4, batch_size=16, seed=3)
    config = FederationConfig(
        n_participants=1, rounds=3, trainer=trainer, seed=3,
        run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    run = run_fednl(config, parts)
    nonfed = server_init(parts[0].d, parts[0].class_count, 3, 0.01)
    ds = parts[0].training_view().in_space()
    step = 0
    for t in range(1, 4):
        seeded = TrainerConfig(
            local_epochs=4, batch_size=16,
            lr_schedule=trainer.lr_schedule, l2_lambda=trainer.l2_lambda,
            seed=derive_seed(3, TRAIN, t, 0),
        )
        nonfed, _ = train_local(nonfed, ds, seeded, global_step_base=step)
        step += 4 * -(-ds.n // 16)
    np.testing.assert_allclose(run.global_model.weights, nonfed.weights, atol=0)
    for record in run.records:
        assert record.epsilon == (1.0,)


def test_fedavg_reduction_is_bitwise():
    parts = make_parts(4)
    trainer = TrainerConfig(local_epochs=3, batch_size=16, seed=4)
    fednl_config = FederationConfig(
        n_participants=4, rounds=5, trainer=trainer, seed=4,
        run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    fedavg_config = FederationConfig(
        n_participants=4, rounds=5, trainer=trainer, seed=4,
        run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    a = run_fednl(fednl_config, parts)
    b = run_fedavg(fedavg_config, parts)
    assert a.global_model.weights.tobytes() == b.global_model.weights.tobytes()
    for ra, rb in zip(a.records, b.records):
        assert ra.local_losses == rb.local_losses
        assert ra.global_loss == rb.global_loss
        assert ra.epsilon == rb.epsilon


# ---------------------------------------------------------------- baseline

def test_fedavg_size_weights_every_round():
    base = synth_gaussian(2, 20, 2, 8.0, seed=5)
    order = np.argsort(base.observed_labels, kind="stable")
    a = base.take(order[:10], name="small")
    b = base.take(order[10:], name="large")
    config = FederationConfig(
        n_participants=2, rounds=4,
        trainer=TrainerConfig(local_epochs=2, batch_size=8, seed=5),
        seed=5, run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    run = run_fedavg(config, [a, b])
    for record in run.records:
        np.testing.assert_allclose(record.epsilon, (0.25, 0.75), atol=1e-12)


def test_fedavg_loss_trend_mostly_decreasing():
    parts = make_parts(6, per_class=60, sep=6.0)
    config = FederationConfig(
        n_participants=4, rounds=50,
        trainer=TrainerConfig(
            local_epochs=2, batch_size=32,
            lr_schedule=Constant(0.02), seed=6,
        ),
        seed=6, run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    run = run_fedavg(config, parts)
    losses = [r.global_loss for r in run.records]
    upticks = sum(1 for x, y in zip(losses, losses[1:]) if y > x + 1e-12)
    assert upticks <= 2


# ---------------------------------------------------------------- records

def test_round_records_bookkeeping():
    parts = make_parts(7)
    server = synth_gaussian(3, 50, 2, 8.0, seed=700, id_base=10_000)
    config = FederationConfig(
        n_participants=4, rounds=4,
        trainer=TrainerConfig(local_epochs=3, batch_size=16, seed=7),
        seed=7, weighting="fednl",
    )
    run = run_fednl(config, parts, server)
    assert len(run.records) == 4
    for t, record in enumerate(run.records, start=1):
        assert record.t == t
        assert record.cumulative_epochs == t * 3
        assert sum(record.epsilon) == pytest.approx(1.0, abs=1e-9)
        assert record.global_loss == pytest.approx(
            float(np.dot(record.epsilon, record.local_losses)), abs=1e-12
        )
        assert record.global_accuracy is not None
    payload = record_to_dict(run.records[0])
    assert payload["t"] == 1 and "epsilon" in payload


def test_diminishing_rates_decrease_across_rounds():
    parts = make_parts(8)
    config = FederationConfig(
        n_participants=4, rounds=5,
        trainer=TrainerConfig(
            local_epochs=2, batch_size=16,
            lr_schedule=Diminishing(theta=10.0, alpha=50.0), seed=8,
        ),
        seed=8, run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    run = run_fedavg(config, parts)
    first_rates = [r.learning_rates[0] for r in run.records]
    assert all(x > y for x, y in zip(first_rates, first_rates[1:]))


def test_freeze_epsilon_holds_round_one_weights():
    parts = make_parts(9)
    server = synth_gaussian(3, 50, 2, 8.0, seed=900, id_base=10_000)
    config = FederationConfig(
        n_participants=4, rounds=5,
        trainer=TrainerConfig(local_epochs=2, batch_size=16, seed=9),
        seed=9, weighting="fednl", freeze_epsilon=True,
    )
    run = run_fednl(config, parts, server)
    first = run.records[0].epsilon
    for record in run.records[1:]:
        assert record.epsilon == first


def test_participant_order_permutation_same_aggregate():
    parts = make_parts(10)
    trainer = TrainerConfig(local_epochs=2, batch_size=16, seed=10)
    seeds = (101, 202, 303, 404)
    perm = [2, 0, 3, 1]
    config_a = FederationConfig(
        n_participants=4, rounds=4, trainer=trainer, seed=10,
        run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
        participant_seeds=seeds,
    )
    config_b = FederationConfig(
        n_participants=4, rounds=4, trainer=trainer, seed=10,
        run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
        participant_seeds=tuple(seeds[p] for p in perm),
    )
    a = run_fedavg(config_a, parts)
    b = run_fedavg(config_b, [parts[p] for p in perm])
    np.testing.assert_allclose(
        a.global_model.weights, b.global_model.weights, atol=1e-9
    )
    # per-participant records permute with the participants
    for ra, rb in zip(a.records, b.records):
        for i, p in enumerate(perm):
            assert rb.local_losses[i] == pytest.approx(ra.local_losses[p], abs=1e-12)


def test_procedure2_requires_server():
    parts = make_parts(11)
    config = FederationConfig(
        n_participants=4, rounds=2,
        trainer=TrainerConfig(local_epochs=2, batch_size=16, seed=11),
        seed=11, run_procedure1=True, run_procedure2=True, weighting="fednl",
    )
    with pytest.raises(ValueError):
        run_fednl(config, parts)


def test_duplicate_ids_rejected():
    base = synth_gaussian(2, 10, 2, 6.0, seed=12)
    config = FederationConfig(
        n_participants=2, rounds=2,
        trainer=TrainerConfig(local_epochs=1, batch_size=8, seed=12),
        seed=12, run_procedure1=False, run_procedure2=False, weighting="fedavg-size",
    )
    with pytest.raises(ValueError):
        run_fedavg(config, [base, base])
