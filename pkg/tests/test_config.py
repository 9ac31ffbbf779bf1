import pytest

from ilash.config import DEFAULTS, ConfigError, load_config, parse_config, resolve

SAMPLE = {"g_th": ("0.3", 0.3, 0.4), "ll": ("1", 1, 2), "ul": ("6", 6, 5),
          "epochs": ("7", 7, 8), "batch_size": ("16", 16, 8),
          "learning_rate": ("0.01", 0.01, 0.02), "seed": ("3", 3, 4),
          "power_profile": ("gtx1080", "gtx1080", "titanxp"), "pue": ("1.2", 1.2, 1.1),
          "freeze_shared": ("false", False, True)}


def test_parse_with_comments():
    cfg = parse_config("# run settings\n\ng_th = 0.3  # weight\nll=auto\nepochs=5\n")
    assert cfg == {"g_th": 0.3, "ll": None, "epochs": 5}


@pytest.mark.parametrize("key", sorted(SAMPLE))
def test_precedence_flag_over_file_over_default(key):
    text, file_val, flag_val = SAMPLE[key]
    file_values = parse_config(f"{key} = {text}\n")
    assert resolve({}, {})[key] == DEFAULTS[key]
    assert resolve({key: None}, file_values)[key] == file_val
    assert resolve({key: flag_val}, file_values)[key] == flag_val


@pytest.mark.parametrize("text, line", [("g_th = 2\n", 1), ("\nbogus = 1\n", 2),
                                        ("epochs = x\n", 1), ("a b c\n", 1),
                                        ("seed=1\nbatch_size=0\n", 2),
                                        ("freeze_shared = maybe\n", 1)])
def test_errors_name_the_line(text, line, tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=rf"run.cfg:{line}:"):
        load_config(path)


def test_missing_file_and_bad_flag(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.cfg")
    with pytest.raises(ConfigError):
        resolve({"g_th": -1.0})
