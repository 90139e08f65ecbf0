import json

import pytest

from contactdiff.config import (OUT_DIR_ENV, ConfigError, RunConfig, config_from_dict, load_config, override,
                                resolve_out_dir)


def test_defaults_roundtrip_through_json(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.json"
    path.write_text(cfg.dumps())
    again = load_config(path)
    assert again == cfg and again.hash() == cfg.hash()
    assert load_config(None) == cfg


def test_partial_documents_fill_defaults():
    cfg = config_from_dict({"networks": {"contact": {"width": 16, "heads": 2}}, "guidance": {"lam": [1, 2, 3, 4]}})
    assert cfg.networks.contact.width == 16
    assert cfg.networks.contact.blocks == RunConfig().networks.contact.blocks
    assert cfg.guidance.lam == (1, 2, 3, 4)


@pytest.mark.parametrize("doc, match", [
    ({"bogus": 1}, "unknown keys"),
    ({"data": {"count": 0}}, "count"),
    ({"networks": {"contact": {"widht": 3}}}, "networks.contact"),
    ({"guidance": {"lam": 0.1}}, "list"),
    ({"diffusion": []}, "object"),
])
def test_invalid_documents_rejected(doc, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(doc)


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)


def test_hash_ignores_output_location_only():
    cfg = RunConfig()
    moved = override(cfg, "paths", out_dir="/elsewhere")
    assert moved.hash() == cfg.hash()
    assert override(cfg, "sampling", seed=5).hash() != cfg.hash()
    assert override(cfg, "networks.contact", steps=None) is cfg
    assert override(cfg, "networks.contact", steps=7).networks.contact.steps == 7


def test_out_dir_env_override(monkeypatch, tmp_path):
    cfg = RunConfig()
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert str(resolve_out_dir(cfg)) == cfg.paths.out_dir
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    assert resolve_out_dir(cfg) == tmp_path


def test_dump_is_plain_json():
    doc = json.loads(RunConfig().dumps())
    assert isinstance(doc["guidance"]["lam"], list)
