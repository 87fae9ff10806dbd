"""Experiment-config parsing, validation, and dataset assembly."""

import numpy as np
import pytest

from fednl.config import (
    ConfigError,
    build_datasets,
    build_federation_config,
    build_trainer_config,
    build_transition_matrix,
    load_config,
    noisy_participant_indices,
    parse_config_text,
    parse_flip_rules,
)


MINIMAL = "seed = 7\n"


def test_minimal_config_fills_defaults():
    config = parse_config_text(MINIMAL)
    assert config["seed"] == 7
    assert config["algorithm"] == "fednl"
    assert config["participants"] == 4
    assert config["trainer.batch_size"] == 32
    assert config["noise.kind"] == "none"


def test_missing_seed_rejected():
    with pytest.raises(ConfigError, match="seed"):
        parse_config_text("rounds = 5\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="definitely_not_a_key"):
        parse_config_text(MINIMAL + "definitely_not_a_key = 1\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")


def test_all_errors_reported_at_once():
    bad = "noise.beta = 1.2\ntrainer.batch_size = 0\nbogus = 3\n"
    with pytest.raises(ConfigError) as info:
        parse_config_text(bad)
    text = str(info.value)
    assert "noise.beta" in text
    assert "trainer.batch_size" in text
    assert "bogus" in text
    assert len(info.value.errors) >= 4  # the three above plus missing seed


def test_out_of_range_value_names_field_and_line():
    with pytest.raises(ConfigError, match=r"noise\.beta"):
        parse_config_text("seed = 1\nnoise.beta = 1.2\n", source="exp.cfg")


def test_file_source_must_exist():
    text = "seed = 1\ndata.source = file\ndata.path = /nonexistent/never.csv\n"
    with pytest.raises(ConfigError, match="data.path"):
        parse_config_text(text)


def test_asymmetric_noise_needs_pairs():
    with pytest.raises(ConfigError, match="noise.pairs"):
        parse_config_text("seed = 1\nnoise.kind = asymmetric\n")


def test_empty_rounds_grid_rejected():
    with pytest.raises(ConfigError, match="rounds_grid"):
        parse_config_text("seed = 1\nrounds_grid.q_o =\n")


def test_noise_participants_range_checked():
    text = "seed = 1\nparticipants = 3\nnoise.kind = symmetric\nnoise.participants = 0,5\n"
    with pytest.raises(ConfigError, match="noise.participants"):
        parse_config_text(text)


def test_flip_rule_parsing():
    rules = parse_flip_rules("1>0:0.3, 2>0:0.25")
    assert rules == [(1, 0, 0.3), (2, 0, 0.25)]
    with pytest.raises(ValueError):
        parse_flip_rules("1-0:0.3")


def test_echo_roundtrip():
    text = (
        "seed = 9\nalgorithm = fedavg\nnoise.kind = symmetric\nnoise.beta = 0.3\n"
        "trainer.eta = 0.05\nrounds = 12\n"
    )
    config = parse_config_text(text)
    echoed = parse_config_text(config.echo())
    assert echoed.values == config.values
    assert echoed.echo() == config.echo()


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("seed = 3\nrounds = 2\n")
    config = load_config(path)
    assert config["seed"] == 3
    assert config["rounds"] == 2


def test_comments_and_blank_lines_ignored():
    text = "# a comment\n\nseed = 4\n   # indented comment\nrounds = 6\n"
    config = parse_config_text(text)
    assert config["rounds"] == 6


# ---------------------------------------------------------------- builders

def test_build_transition_matrix_kinds():
    none = parse_config_text("seed = 1\n")
    assert build_transition_matrix(none) is None
    sym = parse_config_text("seed = 1\nnoise.kind = symmetric\nnoise.beta = 0.2\n")
    matrix = build_transition_matrix(sym)
    assert matrix.probs[0, 0] == pytest.approx(0.8)
    asym = parse_config_text(
        "seed = 1\nnoise.kind = asymmetric\nnoise.pairs = 0>1:0.3\n"
    )
    matrix = build_transition_matrix(asym)
    assert matrix.probs[0, 1] == pytest.approx(0.3)


def test_build_trainer_config_diminishing_defaults_theta():
    text = "seed = 1\ntrainer.schedule = diminishing\ntrainer.alpha = 50\n"
    trainer = build_trainer_config(parse_config_text(text))
    # theta defaults to 2/l2_lambda
    assert trainer.lr_schedule.theta == pytest.approx(2.0 / 0.01)
    assert trainer.lr_schedule.alpha == 50.0


def test_build_federation_config_mirrors_pipeline_flags():
    text = (
        "seed = 1\npipeline.procedure1 = false\npipeline.procedure2 = false\n"
        "pipeline.weighting = fedavg-size\nrounds = 3\n"
    )
    federation = build_federation_config(parse_config_text(text))
    assert not federation.run_procedure1
    assert not federation.run_procedure2
    assert federation.weighting == "fedavg-size"
    assert federation.rounds == 3


def test_noisy_participants_all_and_list():
    everyone = parse_config_text("seed = 1\nparticipants = 3\n")
    assert noisy_participant_indices(everyone) == [0, 1, 2]
    some = parse_config_text(
        "seed = 1\nparticipants = 3\nnoise.kind = symmetric\nnoise.participants = 0,2\n"
    )
    assert noisy_participant_indices(some) == [0, 2]


def test_build_datasets_disjoint_ids_and_selective_noise():
    text = (
        "seed = 5\nparticipants = 3\ndata.classes = 3\ndata.per_class = 30\n"
        "noise.kind = symmetric\nnoise.beta = 0.4\nnoise.participants = 1\n"
        "server.source = synth\nserver.per_class = 20\n"
    )
    parts, server = build_datasets(parse_config_text(text))
    assert len(parts) == 3
    assert server is not None
    all_ids = np.concatenate([p.ids for p in parts] + [server.ids])
    assert len(np.unique(all_ids)) == len(all_ids)
    # only participant 1 carries label noise
    flips = [int((p.observed_labels != p.true_labels).sum()) for p in parts]
    assert flips[0] == 0 and flips[2] == 0
    assert flips[1] > 0
    assert int((server.observed_labels != server.true_labels).sum()) == 0


def test_build_datasets_without_server():
    text = "seed = 6\nparticipants = 2\nserver.source = none\npipeline.procedure2 = false\npipeline.weighting = fedavg-size\n"
    parts, server = build_datasets(parse_config_text(text))
    assert len(parts) == 2
    assert server is None
