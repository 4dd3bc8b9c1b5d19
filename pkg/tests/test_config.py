"""
Tests for layered configuration: environment, key-value files and overrides.
"""
import math
import os

import pytest

from config import ClusteringConfig, load_config
from config.settings import known_keys


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in list(os.environ):
        if key.startswith('ARTIKIN_'):
            monkeypatch.delenv(key)


def write_config(tmp_path, text):
    path = tmp_path / 'run.env'
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.model.dim == 128
        assert cfg.weights.joint == 5.0
        assert cfg.inference.sweep_span_revolute == pytest.approx(math.pi / 2)
        assert cfg.render.background == (1.0, 1.0, 1.0)

    def test_file_values_are_typed(self, tmp_path):
        path = write_config(tmp_path, "ARTIKIN_MODEL_TAPS=0,1,2,2\nARTIKIN_MODEL_LAYERS=2\n"
                                      "ARTIKIN_SINGLE_STAGE=yes\nARTIKIN_BASE_LR=3e-4\nARTIKIN_DATASET=data/x\n")
        cfg = load_config(path)
        assert cfg.model.taps == (0, 1, 2, 2)
        assert cfg.training.single_stage is True
        assert cfg.training.base_lr == pytest.approx(3e-4)
        assert cfg.training.dataset == 'data/x'

    def test_precedence_env_then_file_then_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv('ARTIKIN_SEED', '1')
        monkeypatch.setenv('ARTIKIN_SYNTH_RES', '32')
        path = write_config(tmp_path, "ARTIKIN_SEED=2\n")
        cfg = load_config(path, overrides={'ARTIKIN_SEED': '3'})
        assert cfg.seed == 3
        assert cfg.synth.resolution == 32
        assert load_config(path).seed == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / 'nope.env')

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "ARTIKIN_MODEL_DIM=64\nARTIKIN_MODLE_HEADS=2\n")
        with pytest.raises(ValueError, match='ARTIKIN_MODLE_HEADS'):
            load_config(path)

    def test_invalid_section_values_surface_as_value_errors(self, tmp_path):
        with pytest.raises(ValueError):
            load_config(write_config(tmp_path, "ARTIKIN_LAMBDA_JOINT=-1\n"))

    def test_dump_records_file_keys(self, tmp_path):
        cfg = load_config(write_config(tmp_path, "ARTIKIN_SYNTH_VIEWS=8\nARTIKIN_SEED=4\n"))
        out = tmp_path / 'config.env'
        cfg.dump(out)
        assert out.read_text() == "ARTIKIN_SEED=4\nARTIKIN_SYNTH_VIEWS=8\n"
        assert load_config(out).synth.views == 8


class TestKnownKeys:
    def test_every_section_contributes(self):
        keys = known_keys()
        for key in ('ARTIKIN_SEED', 'ARTIKIN_SYNTH_RES', 'ARTIKIN_MODEL_TAPS', 'ARTIKIN_LAMBDA_RGB',
                    'ARTIKIN_STAGE1_STEPS', 'ARTIKIN_CLUSTER_MIN_SAMPLES', 'ARTIKIN_RENDER_BG',
                    'ARTIKIN_VOXEL_SIZE', 'LOG_LEVEL'):
            assert key in keys

    def test_min_cluster_size_has_a_floor(self):
        cfg = ClusteringConfig(min_cluster_frac=0.005, min_cluster_floor=20)
        assert cfg.min_cluster_size(1000) == 20
        assert cfg.min_cluster_size(10001) == 51
