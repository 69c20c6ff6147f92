import pytest

from chns.config import SCHEMA, ConfigError, parse_config, serialize_config, validate
from chns.stepper import SchemeVariant

MINIMAL = "scenario = spinodal\ntime.tau = 1e-3\ntime.steps = 10\n"


def test_defaults_filled_in():
    cfg = parse_config(MINIMAL)
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["mesh.resolution"] == 64
    assert cfg["dg.degree"] == 1
    assert cfg["limiter.eps1"] == 1e-7
    assert cfg["scheme.variant"] == "constant"


def test_round_trip_is_exact():
    cfg = parse_config(MINIMAL + "model.Pe = 0.1\nmodel.Ca = 1e-4\nlimiter.flux = off\n")
    back = parse_config(serialize_config(cfg))
    assert back.values == cfg.values
    assert back["model.Pe"] == 0.1 and back["limiter.flux"] is False


def test_hex_floats():
    cfg = parse_config(MINIMAL.replace("1e-3", (0.1).hex()))
    assert cfg["time.tau"] == 0.1
    cfg = parse_config(MINIMAL + "model.Cn = -0x0p+0\n")
    assert cfg["model.Cn"] == 0.0


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\n" + MINIMAL.replace("10\n", "10  # steps\n"))
    assert cfg["time.steps"] == 10


@pytest.mark.parametrize("text, key", [
    (MINIMAL.replace("1e-3", "0"), "time.tau"),
    (MINIMAL.replace("1e-3", "-1e-3"), "time.tau"),
    (MINIMAL + "model.bogus = 1\n", "model.bogus"),
    (MINIMAL + "time.tau = 2e-3\n", "time.tau"),
    (MINIMAL.replace("spinodal", "lava"), "scenario"),
    (MINIMAL + "dg.degree = 3\n", "dg.degree"),
    (MINIMAL + "model.theta = 190\n", "model.theta"),
    (MINIMAL + "mesh.resolution = many\n", "mesh.resolution"),
    (MINIMAL + "model.Pe = nan\n", "model.Pe"),
    (MINIMAL + "mesh.geometry = file\n", "mesh.file"),
    (MINIMAL + "mesh.geometry = torus\n", "mesh.dim"),
    (MINIMAL + "boundary.inflow = q=0\n", "boundary.inflow"),
    ("time.tau = 1e-3\ntime.steps = 1\n", "scenario"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("scenario = spinodal\noops\n")


def test_with_values_and_scheme():
    cfg = parse_config(MINIMAL).with_values(time__steps=3, scheme__variant="standard", model__Cn=0.0)
    assert cfg["time.steps"] == 3
    prm = cfg.model_params(h=1 / 32)
    assert prm.Cn == 1 / 32
    assert prm.rho_ref == 800.0
    sch = cfg.scheme(prm)
    assert sch.variant == SchemeVariant.STANDARD
    assert sch.tau == 1e-3
    with pytest.raises(ConfigError):
        cfg.with_values(time__tau=0.0)


def test_validate_coerces_ints_to_floats():
    cfg = validate({"scenario": "droplets", "time.tau": 1, "time.steps": 2})
    assert isinstance(cfg["time.tau"], float)
    with pytest.raises(ConfigError):
        validate({"scenario": "droplets", "time.tau": 1.0, "time.steps": True})
