import json
import math
import pathlib

import pytest

import tabsynth

DATA = pathlib.Path(__file__).resolve().parents[2] / "tests" / "data"

SMALL = {"epochs": 2, "batch_size": 50, "latent_dim": 8, "hidden": 16,
         "classifier_hidden": 16, "classifier_layers": 2, "seed": 5}


@pytest.fixture(scope="module")
def schema():
    return tabsynth.load_schema(DATA / "toy_schema.json")


@pytest.fixture(scope="module")
def table(schema):
    return tabsynth.Table.load(str(DATA / "toy.csv"), schema)


@pytest.fixture(scope="module")
def model(table):
    return tabsynth.train(table, SMALL)


def test_schema_and_table(schema, table):
    assert schema.names == ["x", "amount", "group", "label"]
    assert schema.target_index == 3
    assert len(table) == 300
    again = tabsynth.Table.from_csv(table.to_csv(), schema)
    assert again == table


def test_encoder_round_trip(table):
    enc = tabsynth.Encoder.fit(table, seed=1)
    encoded = enc.encode(table)
    assert encoded.shape == (300, enc.width)
    assert enc.square_side ** 2 >= enc.width + enc.cond_width
    back = enc.decode(encoded)
    for col in (2, 3):
        assert [back.label(i, col) for i in range(10)] == [table.label(i, col) for i in range(10)]


def test_train_and_sample(model, table):
    synth = model.sample(120, seed=3)
    assert len(synth) == 120
    assert synth.schema.names == table.schema.names
    assert len(model.sample(0, seed=3)) == 0
    assert model.sample(40, seed=9) == model.sample(40, seed=9)
    trace = model.loss_trace_csv().splitlines()
    assert trace[0] == "epoch,L_D,L_G,L_class,L_info,L_cond"
    assert len(trace) == 3


def test_unknown_condition_raises_with_code(model):
    with pytest.raises(tabsynth.Error) as info:
        model.sample(5, seed=1, column="label", value="maybe")
    assert info.value.args[0] == "InvalidCondition"


def test_checkpoint_round_trip(model, tmp_path):
    path = tmp_path / "model.json"
    model.save(str(path))
    back = tabsynth.Model.load(str(path))
    assert back.sample(30, seed=2) == model.sample(30, seed=2)


def test_metrics(table):
    assert tabsynth.jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.3113, abs=1e-4)
    assert tabsynth.wasserstein([0.0, 1.0], [0.0, 2.0]) == pytest.approx(0.5)
    rep = tabsynth.similarity(table, table)
    assert rep["avg_jsd"] == 0.0 and rep["avg_wd"] == 0.0
    assert tabsynth.diff_corr(table, table) == 0.0
    assert tabsynth.dcr_nndr(table, table)["dcr_real_synth"] == 0.0


def test_accountant():
    planned = tabsynth.account(sigma=20.0, batch=8, n=500, epsilon=1.0, delta=1e-5)
    assert planned["T"] > 0 and planned["epsilon"] <= 1.0
    fixed = tabsynth.account(sigma=20.0, batch=8, n=500, iterations=planned["T"] + 50, delta=1e-5)
    assert fixed["epsilon"] > planned["epsilon"]
    assert tabsynth.rdp_to_dp(2, 0.0, 1e-5) == pytest.approx(math.log(1e5), abs=1e-4)
    with pytest.raises(tabsynth.Error) as info:
        tabsynth.account(sigma=1.0, batch=8, n=500, variant="x_dp")
    assert info.value.args[0] == "InvalidConfig"


def test_private_training_reports_budget(table):
    _, report = tabsynth.train_private(table, dict(SMALL, epochs=1), {"sigma": 20.0, "batch": 8, "epsilon": 1.0})
    assert report["variant"] == "d_dp"
    assert 0.0 < report["epsilon"] <= 1.0


def test_attack_features(table):
    naive = tabsynth.features_naive(table)
    assert len(naive) == 3 * 4
    corr = tabsynth.features_corr(table)
    assert all(-1.0 - 1e-12 <= v <= 1.0 + 1e-12 for v in corr)
