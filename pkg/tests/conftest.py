"""
Pytest configuration for tests.
Adds the project root to sys.path so 'app' module can be imported,
and provides small shared fixtures.
"""
import sys
import os

# Add the project root directory to the Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from pathlib import Path

import pytest

from app.config.experiment import ExperimentConfig, load_experiment_config
from app.core.models import ModelKind, ModelSpec
from app.core.numerics import RngStream

CONFIG_DIR = Path(project_root) / "configs"


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def lr_spec():
    return ModelSpec(ModelKind.LOGISTIC_REGRESSION, input_dim=3, num_classes=3)


@pytest.fixture
def mlp_spec():
    return ModelSpec(ModelKind.MLP1, input_dim=3, num_classes=2, hidden_dim=4)


@pytest.fixture
def smoke_config() -> ExperimentConfig:
    return load_experiment_config(CONFIG_DIR / "smoke.json")


@pytest.fixture
def default_config() -> ExperimentConfig:
    return load_experiment_config(CONFIG_DIR / "default.json")


@pytest.fixture
def variant():
    """Builds a copy of a config with the named sections merged over the originals."""
    def build(config: ExperimentConfig, **sections) -> ExperimentConfig:
        data = config.model_dump(mode="json", by_alias=True)
        for name, values in sections.items():
            if isinstance(values, dict) and isinstance(data.get(name), dict):
                data[name] = {**data[name], **values}
            else:
                data[name] = values
        return ExperimentConfig.model_validate(data)
    return build
