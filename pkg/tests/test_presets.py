import json
from pathlib import Path

import numpy as np
import pytest

from cgrf.constrained import ConstrainedField, GaussianField, verify_conditions
from cgrf.expressions import ExpressionError, parse
from cgrf.presets import PRESETS, ConfigError, constraint_set_from_json, field_from_json

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_expression_values_and_derivatives():
    e = parse("x1^2 * sin(x2) + exp(-x1)", ("x1", "x2"))
    X = np.array([[0.5, 1.0], [2.0, -0.3]])
    np.testing.assert_allclose(e(X), X[:, 0] ** 2 * np.sin(X[:, 1]) + np.exp(-X[:, 0]), rtol=1e-15)
    np.testing.assert_allclose(e.derivative((1, 0))(X), 2 * X[:, 0] * np.sin(X[:, 1]) - np.exp(-X[:, 0]))
    np.testing.assert_allclose(e.derivative((0, 2))(X), -X[:, 0] ** 2 * np.sin(X[:, 1]))
    assert parse("0", ("x1",)).is_zero


def test_expression_constant_broadcasts():
    assert parse("0.005*2", ("t",))(np.zeros((3, 1))).shape == (3,)


@pytest.mark.parametrize("bad", ["", "x1 +", "import os", "x3", "x1 ; 2", "__class__", "x1 % 2"])
def test_expression_rejects(bad):
    with pytest.raises(ExpressionError):
        parse(bad, ("x1", "x2"))


def test_expression_aliases():
    e = parse("x*t", ("t", "x1"), {"x": "x1"})
    assert e(np.array([[2.0, 3.0]]))[0] == 6.0


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_build_and_verify(name):
    cf = ConstrainedField(PRESETS[name]())
    assert verify_conditions(cf, 12, tol=1e-6).passed


def test_explicit_config():
    cfg = {
        "domain": {"shape": "unit_square"},
        "kernel": {"form": "se", "lengthscales": [0.4, 0.4]},
        "mean": "x1*x2",
        "constraints": [
            {"segment": 0, "target": "x2^2", "operator": "state"},
            {"segment": 1, "target": 1.0, "operator": {"a": 1, "b": 2, "axis": 0}, "weight": "recipe"},
        ],
    }
    cs = constraint_set_from_json(cfg)
    assert cs.n == 2
    assert not cs.base_mean.is_zero
    assert verify_conditions(ConstrainedField(cs), 15).passed


def test_empty_constraints_give_base_field():
    f = field_from_json({"domain": {"shape": "interval"}, "kernel": {"form": "matern", "nu": 1.5}})
    assert isinstance(f, GaussianField)


@pytest.mark.parametrize("cfg", [
    {"preset": "nope"},
    {"domain": {"shape": "unit_disk"}},
    {"domain": {"shape": "interval"}, "kernel": {"form": "se"}, "constraints": [{"segment": 9}]},
    {"domain": {"shape": "interval"}, "kernel": {"form": "se"}, "constraints": [{"segment": 0, "weight": 3}]},
    {"domain": {"shape": "interval"}, "kernel": {"form": "se"}, "constraints": [{"segment": 0, "target": "y"}]},
])
def test_config_errors(cfg):
    with pytest.raises(ConfigError):
        constraint_set_from_json(cfg)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = json.loads(path.read_text())
    assert isinstance(cfg, dict)
    if "preset" in cfg or "domain" in cfg:
        field_from_json(cfg)
