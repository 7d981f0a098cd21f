import json

import pytest

from rodgen.config import ConfigError, PipelineConfig, validate_config, with_overrides


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    cfg = validate_config(p)
    assert (cfg.alpha1, cfg.dbscan_eps, cfg.dbscan_min_pts, cfg.temperature) == (0.5, 1.5, 2, 0.7)
    assert cfg.caption_repeats == 2 and cfg.splice_cap == 10
    assert validate_config() == PipelineConfig()


@pytest.mark.parametrize("field,value", [("alpha1", 1.5), ("dbscan_eps", -1.0), ("dbscan_min_pts", 0),
                                         ("temperature", -0.1), ("max_in_flight", {"chat": 0})])
def test_out_of_range_faults(field, value):
    with pytest.raises(ConfigError) as err:
        validate_config(**{field: value})
    assert any(field in v for v in err.value.violations)


def test_all_violations_listed(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("alpha1: 2\ndbscan_eps: -1\nbogus: 3\n")
    with pytest.raises(ConfigError) as err:
        validate_config(p)
    text = " ".join(err.value.violations)
    assert "alpha1" in text and "dbscan_eps" in text and "bogus" in text


def test_yaml_and_json_agree(tmp_path):
    (tmp_path / "a.yaml").write_text("alpha1: 0.3\ninputs:\n  annotations: x.json\n")
    (tmp_path / "a.json").write_text(json.dumps({"alpha1": 0.3, "inputs": {"annotations": "x.json"}}))
    assert validate_config(tmp_path / "a.yaml") == validate_config(tmp_path / "a.json")


def test_overrides():
    cfg = with_overrides(PipelineConfig(), alpha1=0.2, dbscan_eps=None)
    assert cfg.alpha1 == 0.2 and cfg.dbscan_eps == 1.5
    with pytest.raises(ConfigError):
        with_overrides(cfg, alpha1=-0.1)
