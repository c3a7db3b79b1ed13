import json

import pytest

from fedtt.config import ConfigError, ExperimentConfig, config_to_dict, load_config


def write(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_defaults_mirror_the_reference_setup():
    cfg = load_config()
    fed = cfg.federation
    assert (fed.history, fed.horizon, fed.lambda1, fed.lambda2) == (12, 3, 0.7, 0.4)
    assert cfg.split == [0.05, 0.10, 0.10]
    assert len(cfg.synthesis.sensor_counts) == 4  # three sources, one target


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = write(tmp_path, {"seed": 5, "out": "from-file", "federation": {"rounds": 7}})
    cfg = load_config(path, {"seed": 9, "out": None})
    assert cfg.seed == 9 and cfg.out == "from-file" and cfg.federation.rounds == 7
    assert cfg.federation.batches == ExperimentConfig().federation.batches


@pytest.mark.parametrize("doc,match", [
    ({"sedd": 1}, "unknown key"),
    ({"federation": {"round": 3}}, "federation.round"),
    ({"seed": "one"}, "integer"),
    ({"deterministic": 1}, "true or false"),
    ({"split": [0.5, 0.5]}, "split"),
    ({"federation": {"transport": "udp"}}, "transport"),
    ({"federation": {"freeze_period": 0}}, "freeze"),
    ({"synthesis": {"sensor_counts": [4, 0]}}, "synthesis"),
    ({"impute": {"evaluation_rate": 1.5}}, "evaluation_rate"),
    ([1, 2], "object"),
])
def test_invalid_documents_are_rejected(tmp_path, doc, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, doc))


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_roundtrip_through_json(tmp_path):
    cfg = load_config(None, {"seed": 3})
    back = load_config(write(tmp_path, config_to_dict(cfg)))
    assert config_to_dict(back) == config_to_dict(cfg)


def test_options_feed_the_federation():
    opts = load_config().federation.options()
    assert opts["gen_opt"].beta1 == 0.5 and opts["gen_opt"].optimistic
    assert opts["predictor_opt"].epochs == 200
    assert load_config().impute.build(4).seed == 4
