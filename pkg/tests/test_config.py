import pytest

from ctcpsim.config import (
    ConfigError,
    ExperimentConfig,
    ScenarioOverrides,
    experiment_config_from_ini,
    load_experiment_config,
    read_ini_config_string,
)
from ctcpsim.congestion import Variant

INI = """
[experiment]
# comma-separated lists
variants = ctcp_v2, hybla
per = 0, 0.2
rtt_ms = 500
transfer_mb = 2
seed = 7

[scenario]
queue_capacity =
ack_loss = yes
carry_payload = no
pacing = no
"""


def test_defaults():
    c = ExperimentConfig().validate()
    assert c.variants == tuple(Variant)
    assert c.per == (0.0, 0.005, 0.01, 0.025, 0.05, 0.1, 0.2)
    assert c.rtt_ms == (500.0, 600.0, 700.0, 800.0)
    assert c.link_rate_bps == 10e6
    assert c.transfer_bytes == 20_000_000
    assert c.repetitions == 5
    assert c.scenario == ScenarioOverrides()


def test_from_ini():
    c = experiment_config_from_ini(read_ini_config_string(INI))
    assert c.variants == (Variant.CTCP_V2, Variant.HYBLA)
    assert c.per == (0.0, 0.2)
    assert c.rtt_ms == (500.0,)
    assert c.transfer_bytes == 2_000_000
    assert c.seed == 7
    assert c.scenario.queue_capacity is None
    assert c.scenario.ack_loss is True
    assert c.scenario.carry_payload is False
    assert c.scenario.pacing is False
    assert c.scenario.generation_size == 32


def test_file_then_overrides(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(INI)
    c = load_experiment_config(str(path), seed=11, repetitions=None, generation_size=16)
    assert c.seed == 11
    assert c.repetitions == 5
    assert c.scenario.generation_size == 16
    assert c.per == (0.0, 0.2)


@pytest.mark.parametrize(
    "text",
    [
        "[experiment]\nvariants = vegas\n",
        "[experiment]\nper = 0, 1.0\n",
        "[experiment]\nrepetitions = many\n",
        "[experiment]\ncolour = blue\n",
        "[scenario]\ngeneration_size = 300\n",
        "[scenario]\nack_loss = maybe\n",
        "[experiment\nseed = 1\n",
    ],
)
def test_bad_ini(text):
    with pytest.raises(ConfigError):
        experiment_config_from_ini(read_ini_config_string(text))


def test_replace_validates():
    c = ExperimentConfig()
    with pytest.raises(ConfigError):
        c.replace(rtt_ms=())
    with pytest.raises(ConfigError):
        c.replace(parallel=0)
    with pytest.raises(ConfigError):
        c.replace(queue_capacity=0)
    assert c.replace(queue_capacity=50).scenario.queue_capacity == 50
    # the original is untouched
    assert c.scenario.queue_capacity is None


def test_config_error_is_a_value_error():
    assert issubclass(ConfigError, ValueError)
