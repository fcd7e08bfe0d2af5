import pytest

from waapo.config import (
    PRESET_NAMES,
    AttackSection,
    ModelSection,
    PenaltySection,
    RunConfig,
    broadcast_weights,
    config_from_text,
    load_config,
    preset_config,
    render_config,
    resolve_channels,
)
from waapo.errors import ConfigError

MINIMAL = """
[model]
lat = 8
lon = 16
channels = 2
channel_names = t2m, sp

[attack]
channels = t2m
horizon = 4

[penalties]
calibrate = true

[optimizer]
seed = 3

[output]
directory = out
"""


class TestParsing:
    def test_minimal_config(self):
        cfg = config_from_text(MINIMAL, "mini")
        assert cfg.model.lat == 8 and cfg.model.channels == 2
        assert cfg.attack.channels == ("t2m",)
        assert cfg.attack.horizon == 4
        assert cfg.optimizer.seed == 3
        assert cfg.output.directory == "out"

    def test_unknown_key_rejected(self):
        text = MINIMAL + "\n[model]\n"  # configparser strict would dup; instead inject typo
        bad = MINIMAL.replace("horizon = 4", "horizon = 4\nhorzon = 5")
        with pytest.raises(ConfigError, match="horzon"):
            config_from_text(bad, "bad")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="sections"):
            config_from_text(MINIMAL + "\n[extra]\nx = 1\n", "bad")

    def test_unknown_channel_name_rejected(self):
        bad = MINIMAL.replace("channels = t2m\n", "channels = t9m\n")
        with pytest.raises(ConfigError, match="t9m"):
            config_from_text(bad, "bad")

    def test_bad_value_type(self):
        bad = MINIMAL.replace("lat = 8", "lat = eight")
        with pytest.raises(ConfigError, match="integer"):
            config_from_text(bad, "bad")

    def test_channel_name_count_mismatch(self):
        bad = MINIMAL.replace("channel_names = t2m, sp", "channel_names = t2m")
        with pytest.raises(ConfigError):
            config_from_text(bad, "bad")

    def test_patch_requires_both_fields(self):
        bad = MINIMAL.replace("[penalties]", "patch_origin = 1, 1\n[penalties]")
        with pytest.raises(ConfigError, match="patch"):
            config_from_text(bad, "bad")

    def test_epsilon_with_calibrate_rejected(self):
        bad = MINIMAL.replace("calibrate = true", "calibrate = true\nepsilon = 1.0, 2.0")
        with pytest.raises(ConfigError, match="calibrate"):
            config_from_text(bad, "bad")

    def test_explicit_bounds(self):
        text = MINIMAL.replace(
            "calibrate = true", "calibrate = false\nepsilon = 1.0, 2.0\ntau = 3.0, 4.0"
        )
        cfg = config_from_text(text, "explicit")
        assert cfg.penalties.epsilon == (1.0, 2.0)
        assert cfg.penalties.tau == (3.0, 4.0)

    def test_missing_bounds_need_zero_weights(self):
        bad = MINIMAL.replace("calibrate = true", "calibrate = false")
        with pytest.raises(ConfigError, match="epsilon and tau"):
            config_from_text(bad, "bad")
        ok = MINIMAL.replace("calibrate = true", "calibrate = false\nlambda_inf = 0\nlambda_tv = 0")
        cfg = config_from_text(ok, "ok")
        assert not cfg.penalties.calibrate

    def test_clip_norm_none(self):
        text = MINIMAL.replace("seed = 3", "seed = 3\nclip_norm = none")
        cfg = config_from_text(text, "x")
        assert cfg.optimizer.clip_norm is None

    def test_penalty_window(self):
        text = MINIMAL.replace("horizon = 4", "horizon = 4\npenalty_window = 1, 4")
        cfg = config_from_text(text, "x")
        assert cfg.attack.penalty_window == (1, 4)
        bad = MINIMAL.replace("horizon = 4", "horizon = 4\npenalty_window = 1, 9")
        with pytest.raises(ConfigError):
            config_from_text(bad, "bad")


class TestRoundTrip:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_roundtrip(self, name):
        cfg = preset_config(name)
        text = render_config(cfg)
        back = config_from_text(text, name)
        assert back == cfg

    def test_file_roundtrip(self, tmp_path):
        cfg = preset_config("patch").with_overrides(seed=99, out_dir="elsewhere")
        p = tmp_path / "run.ini"
        p.write_text(render_config(cfg))
        back = load_config(p)
        assert back.model == cfg.model
        assert back.attack == cfg.attack
        assert back.penalties == cfg.penalties
        assert back.optimizer == cfg.optimizer
        assert back.output == cfg.output


class TestPresets:
    def test_names(self):
        assert set(PRESET_NAMES) == {"unconstrained", "channel-only", "patch", "patch-smooth", "patch-rough"}
        with pytest.raises(ConfigError):
            preset_config("nope")

    def test_unconstrained_no_penalties(self):
        cfg = preset_config("unconstrained")
        assert cfg.attack.channels is None
        assert cfg.penalties.lambda_inf == (0.0,) and cfg.penalties.lambda_tv == (0.0,)

    def test_patch_pair_differs_only_in_tv_weight(self):
        smooth = preset_config("patch-smooth")
        rough = preset_config("patch-rough")
        assert smooth.attack == rough.attack
        assert smooth.optimizer == rough.optimizer
        assert smooth.penalties.lambda_tv == (0.01,)
        assert rough.penalties.lambda_tv == (0.0,)

    def test_patch_geometry_in_bounds(self):
        cfg = preset_config("patch")
        (lat0, lon0), (lat_p, lon_p) = cfg.attack.patch_origin, cfg.attack.patch_size
        assert lat0 + lat_p <= cfg.model.lat
        assert lon0 + lon_p <= cfg.model.lon


class TestHelpers:
    def test_resolve_channels(self):
        names = ("t2m", "u10", "v10", "sp")
        assert resolve_channels(AttackSection(channels=None), names).members == frozenset(range(4))
        assert resolve_channels(AttackSection(channels=("sp", "t2m")), names).members == frozenset({0, 3})

    def test_broadcast_weights(self):
        assert broadcast_weights((0.5,), 3) == (0.5, 0.5, 0.5)
        assert broadcast_weights((1.0, 2.0, 3.0), 3) == (1.0, 2.0, 3.0)

    def test_with_overrides(self):
        cfg = preset_config("patch")
        out = cfg.with_overrides(seed=11, out_dir="x")
        assert out.optimizer.seed == 11 and out.output.directory == "x"
        assert out.model == cfg.model and out.attack == cfg.attack
