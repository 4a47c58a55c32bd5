import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdrop.config import ConfigError, SimConfig, format_config, parse_config


def test_minimal_file_gets_defaults():
    cfg = parse_config("[domain]\nkappa = 250\n")
    assert cfg.kappa == 250.0
    assert cfg.K == SimConfig().K and cfg.dt is None and cfg.sobolev_s == 4.0


def test_auto_values_and_comments():
    cfg = parse_config("# run\n[time]\ndt = auto ; default step\n[output]\nstride = 0.1\n")
    assert cfg.dt is None and cfg.stride == 0.1


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[domain]\nkappa = 0\n", "ill-posed"),
        ("[domain]\nsobolev_s = 3\n", "7/2"),
        ("[domain]\nmodes = 4\n", "modes"),
        ("[domain]\nbogus = 1\n", "unknown key"),
        ("[nowhere]\n", "unknown section"),
        ("kappa = 1\n", "outside any section"),
        ("[domain]\nkappa = abc\n", "expects a number"),
        ("[domain]\nkappa\n", "key = value"),
        ("[init]\npreset = vortex\n", "unknown preset"),
        ("[domain]\nkappa = 1\nkappa = 2\n", "duplicate"),
    ],
)
def test_violations_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msg = "; ".join(exc.value.violations)
    assert fragment in msg
    assert "line " in msg


def test_all_violations_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config("[domain]\nkappa = -1\nsobolev_s = 2\nfoo = 3\n")
    assert len(exc.value.violations) == 3


@settings(max_examples=40, deadline=None)
@given(
    kappa=st.floats(1e-3, 1e6),
    K=st.integers(8, 64),
    dt=st.one_of(st.none(), st.floats(1e-6, 1e-1)),
    preset=st.sampled_from(["rest", "rotation", "stream", "gradient-pulse"]),
    regime=st.booleans(),
)
def test_format_parse_roundtrip(kappa, K, dt, preset, regime):
    cfg = SimConfig(kappa=kappa, K=K, dt=dt, preset=preset, theorem_regime=regime)
    assert parse_config(format_config(cfg)) == cfg
