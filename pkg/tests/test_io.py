import json

import numpy as np
import pytest

from mmisac.channel import CirMatrix
from mmisac.io import (
    config_from_dict,
    config_to_dict,
    csv_text,
    fmt,
    load_cir,
    load_config,
    read_csv,
    save_cir,
    tensor_from_bytes,
    tensor_from_json,
    tensor_to_bytes,
    tensor_to_json,
)
from mmisac.sim import ConfigError, ScenarioConfig, respiration_scene


def _tensor(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.mark.parametrize("shape", [(2, 3, 4), (16, 16, 512), (5,)])
def test_tensor_bytes_round_trip(shape):
    x = _tensor(shape)
    data = tensor_to_bytes(x)
    y = tensor_from_bytes(data)
    np.testing.assert_array_equal(y.reshape(x.shape), x)
    assert len(data) == 24 + 16 * x.size


def test_tensor_bytes_layout():
    data = tensor_to_bytes(np.array([[[1 + 2j]]]))
    assert data[:24] == (1).to_bytes(8, "little") * 3
    assert np.frombuffer(data[24:], "<f8").tolist() == [1.0, 2.0]


def test_tensor_bytes_truncated():
    data = tensor_to_bytes(_tensor((2, 2, 2)))
    with pytest.raises(ValueError):
        tensor_from_bytes(data[:-8])
    with pytest.raises(ValueError):
        tensor_from_bytes(data[:10])


def test_tensor_json_round_trip():
    x = _tensor((3, 2, 5), 1)
    np.testing.assert_array_equal(tensor_from_json(tensor_to_json(x)), x)
    bad = json.loads(tensor_to_json(x))
    bad["im"] = bad["im"][:-1]
    with pytest.raises(ValueError):
        tensor_from_json(json.dumps(bad))


def test_cir_file_round_trip(tmp_path):
    cir = CirMatrix(_tensor((64, 10), 2), 5e-10, 0.01)
    save_cir(cir, tmp_path / "c.bin")
    back = load_cir(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.taps, cir.taps)
    assert (back.tap_duration, back.packet_interval) == (cir.tap_duration, cir.packet_interval)


def test_config_round_trip(tmp_path):
    cfg = ScenarioConfig(respiration_scene(), seed=5, scheduler="rr", adc_enob=6.0)
    d = config_to_dict(cfg)
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(d))
    back = load_config(p)
    assert config_to_dict(back) == d
    assert load_config(p, seed=9).seed == 9


def test_config_reports_every_problem():
    d = config_to_dict(ScenarioConfig(respiration_scene(), seed=0))
    d.update(scheduler="fifo", slot_duration=-1, colour="red")
    del d["seed"]
    with pytest.raises(ConfigError) as exc:
        config_from_dict(d)
    text = " ".join(exc.value.problems)
    for needle in ("colour", "seed", "scheduler", "slot_duration"):
        assert needle in text


def test_config_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_csv_nine_significant_digits():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(True) == "1" and fmt(None) == ""
    text = csv_text(("a", "b"), [(1 / 3, "x"), (2.0, None)])
    assert read_csv(text) == [{"a": "0.333333333", "b": "x"}, {"a": "2", "b": ""}]
