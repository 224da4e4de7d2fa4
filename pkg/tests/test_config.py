import pytest

from aed_eend import config as config_mod
from aed_eend.errors import InputError


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_defaults_validate():
    cfg = config_mod.build(environ={})
    assert cfg.decode.L_stop == 10 and cfg.score.collar == 0.25


def test_layer_precedence(tmp_path):
    p = write(tmp_path, "[train]\nepochs = 7\nlr_scale = 2\n[model]\nD = 32\n")
    env = {"AEDD_TRAIN_EPOCHS": "9", "AEDD_MODEL_D": "48"}
    cfg = config_mod.build(p, {"model.D": 64}, environ=env)
    assert cfg.train.epochs == 9          # env beats file
    assert cfg.model.D == 64              # flag beats env
    assert cfg.train.lr_scale == 2.0 and isinstance(cfg.train.lr_scale, float)


def test_env_keys_case_insensitive_and_foreign_ignored():
    env = {"AEDD_TRAIN_L_ENROLL_MIN": "12", "AEDD_PURE_PYTHON": "1", "OTHER": "x"}
    assert config_mod.build(environ=env).train.L_enroll_min == 12


def test_optional_and_bool_fields():
    env = {"AEDD_DECODE_ORACLE_NUM_SPEAKERS": "none", "AEDD_TRAIN_SIGN_FLIP": "yes"}
    cfg = config_mod.build(environ=env)
    assert cfg.decode.oracle_num_speakers is None and cfg.train.sign_flip is True


@pytest.mark.parametrize("text", [
    "[nosuch]\nx = 1\n",
    "[train]\nnosuch = 1\n",
    "epochs = 3\n",
    "[train\n",
    "[run]\nprecision = 16\n",
])
def test_bad_files_rejected(tmp_path, text):
    with pytest.raises(InputError):
        config_mod.build(write(tmp_path, text), environ={})


def test_bad_env_value_rejected():
    with pytest.raises(InputError, match="AEDD_TRAIN_EPOCHS"):
        config_mod.build(environ={"AEDD_TRAIN_EPOCHS": "many"})


def test_missing_file():
    with pytest.raises(InputError):
        config_mod.build("/nonexistent/c.toml", environ={})


def test_dumps_roundtrip(tmp_path):
    cfg = config_mod.build(overrides={"model.D": 32, "decode.strategy": "init",
                                      "sim.mean_gap_frames": 12.5}, environ={})
    again = config_mod.build(write(tmp_path, config_mod.dumps(cfg)), environ={})
    assert again.to_dict() == cfg.to_dict()


def test_published_settings_are_defaults():
    cfg = config_mod.build(environ={})
    assert (cfg.decode.L_enroll, cfg.decode.L_stop) == (5, 10)
    assert (cfg.train.L_enroll_min, cfg.train.L_enroll_max) == (10, 30)
    assert cfg.score.collar == 0.25
