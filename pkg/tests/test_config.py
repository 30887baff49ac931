import pytest

from ctdf import config as cfgmod
from ctdf.errors import ConfigError

TEXT = """
[run]
seed = 9
iterations = 300
dtype = float64

[model]
kind = unet
init_channels = 8

[sim]
size = 32
lesion_fraction = 0.5  # half the phantoms get a lesion

[optim]
schedule = 0:1e-3, 100:1e-4, 500:1e-5
"""


def test_defaults():
    cfg = cfgmod.loads("")
    assert cfg.model == "hrnet" and cfg.iterations == 2000
    assert cfg.schedule.format() == cfgmod.LrSchedule.parse(cfgmod.DESK_SCHEDULE).format()
    assert cfg.augment.max_translate == cfg.phantom.size // 4
    assert cfg.augment.target_size == cfg.phantom.size


def test_parse_values():
    cfg = cfgmod.loads(TEXT)
    assert (cfg.seed, cfg.iterations, cfg.dtype, cfg.model) == (9, 300, "float64", "unet")
    assert cfg.unet.init_channels == 8 and cfg.unet.input_size == 32
    assert cfg.lesion_fraction == 0.5
    assert cfg.augment.max_translate == 8


def test_unreached_milestone_warns():
    assert cfgmod.loads(TEXT).warnings == ["lr milestone at iteration 500 is never reached (300 iterations)"]


def test_roundtrip():
    cfg = cfgmod.loads(TEXT)
    again = cfgmod.loads(cfgmod.dumps(cfg))
    assert cfgmod.dumps(again) == cfgmod.dumps(cfg)
    assert again.hash() == cfg.hash()


def test_hash_tracks_training_settings_only():
    base = cfgmod.loads(TEXT)
    assert cfgmod.loads(TEXT.replace("iterations = 300", "iterations = 400")).hash() == base.hash()
    assert cfgmod.loads(TEXT.replace("seed = 9", "seed = 10")).hash() != base.hash()


@pytest.mark.parametrize("text,match", [
    ("[bogus]\nx = 1\n", "unknown config section"),
    ("[run]\nseeds = 1\n", "unknown config key run.seeds"),
    ("[run]\niterations = many\n", "bad value for run.iterations"),
    ("[run]\niterations = 0\n", "iterations"),
    ("[model]\nkind = resnet\n", "hrnet or unet"),
    ("[model]\ninput_skip = maybe\n", "input_skip"),
    ("[sim]\nsize = 60\n", "not divisible by 8"),
    ("[sim]\nI0 = -1\n", "I0"),
    ("[sim]\ndose_fraction = 1.0\n", "fraction"),
    ("[sim]\nlesion_fraction = 2\n", "lesion_fraction"),
    ("[augment]\ntarget_size = 32\n", "target_size"),
    ("[data]\nn_train = 0\n", "n_train"),
    ("not an ini", "cannot parse"),
])
def test_rejects(text, match):
    with pytest.raises(ConfigError, match=match):
        cfgmod.loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(str(tmp_path / "none.cfg"))


def test_resolve_paths(tmp_path):
    p = cfgmod.resolve(cfgmod.loads(""), str(tmp_path))
    assert p.data_dir == str(tmp_path / "data") and p.report_dir == str(tmp_path / "reports")
