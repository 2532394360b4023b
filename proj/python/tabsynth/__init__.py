"""Python front end for the tabsynth C++ core.

Configs and reports travel as JSON text across the extension boundary; this layer
accepts and returns plain dicts.
"""

import json

from . import _core
from ._core import Encoder, Error, Model, Schema, Table, diff_corr, features_corr, features_naive, jsd, rdp_to_dp, wasserstein

__all__ = [
    "Encoder",
    "Error",
    "Model",
    "Schema",
    "Table",
    "account",
    "attribute_audit",
    "dcr_nndr",
    "diff_corr",
    "features_corr",
    "features_naive",
    "jsd",
    "load_schema",
    "membership_audit",
    "ml_utility",
    "rdp_to_dp",
    "similarity",
    "train",
    "train_private",
    "wasserstein",
]


def _dump(obj):
    return json.dumps(obj or {})


def load_schema(spec):
    """Schema from a dict or a path to a schema JSON file."""
    if isinstance(spec, dict):
        return Schema.from_json(json.dumps(spec))
    return Schema.load(str(spec))


def train(table, config=None):
    return _core.train(table, _dump(config))


def train_private(table, config=None, privacy=None):
    """Returns (model, privacy report dict)."""
    model, report = _core.train_private(table, _dump(config), _dump(privacy))
    return model, json.loads(report)


def account(**privacy):
    """Plans iterations for a target epsilon, or reports epsilon when `iterations` is given."""
    return json.loads(_core.account(json.dumps(privacy)))


def similarity(real, synth):
    return json.loads(_core.similarity(real, synth))


def dcr_nndr(real, synth):
    return json.loads(_core.dcr_nndr(real, synth))


def ml_utility(real_train, synth_train, test, models=None, seed=0):
    if models is None:
        return json.loads(_core.ml_utility(real_train, synth_train, test, seed=seed))
    return json.loads(_core.ml_utility(real_train, synth_train, test, list(models), seed))


def membership_audit(pool, reference_size, repetitions=5, train_config=None, attack_config=None):
    return json.loads(
        _core.membership_audit(pool, reference_size, repetitions, _dump(train_config), _dump(attack_config))
    )


def attribute_audit(reference, sensitive, repetitions=5, train_config=None, attack_config=None):
    return json.loads(
        _core.attribute_audit(reference, sensitive, repetitions, _dump(train_config), _dump(attack_config))
    )
