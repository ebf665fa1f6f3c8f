import pytest

from fracsing.config import RunOptions, build_config, dump_config, load_config, parse_config
from fracsing.core import Nonlinearity, ProblemSpec
from fracsing.errors import ConfigurationError

SAMPLE = """
# Three-solution setup
s = 0.25
alpha = 10
sigma2 = 270
N = 128
lambda = 0.2   # inside the window
lambda_points = 12
"""


def test_parse() -> None:
    values = parse_config(SAMPLE)
    assert values["n"] == "128"
    assert values["lambda"] == "0.2"
    cfg = build_config(values)
    assert cfg.spec.n == 128
    assert cfg.spec.lam == 0.2
    assert cfg.spec.alpha == 10.0
    assert cfg.options.lambda_points == 12
    assert cfg.options.workers == RunOptions().workers


def test_unknown_and_bad_values() -> None:
    with pytest.raises(ConfigurationError):
        parse_config("mu = 3\n")
    with pytest.raises(ConfigurationError):
        build_config({"n": "many"})
    with pytest.raises(ConfigurationError):
        build_config({}, {"s": 0.7})
    with pytest.raises(ConfigurationError):
        build_config({"workers": "0"})
    with pytest.raises(ConfigurationError):
        build_config({"lambda_min": "2", "lambda_max": "1"})


def test_overrides_win(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text(SAMPLE)
    cfg = load_config(str(path), {"lambda": 0.25, "n": None, "workers": 2})
    assert cfg.spec.lam == 0.25
    # None means "not given on the command line"
    assert cfg.spec.n == 128
    assert cfg.options.workers == 2


def test_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "nope.cfg"))


def test_dump_and_reload() -> None:
    spec = ProblemSpec(alpha=10.0, sigma2=270.0, n=128, lam=1.0 / 7.0, seed=3)
    options = RunOptions(lambda_min=0.01, lambda_max=10.0, lambda_points=7, workers=2)
    cfg = build_config(parse_config(dump_config(spec, options)))
    assert cfg.spec == spec
    assert cfg.options == options
    assert build_config(parse_config(spec.to_config())).spec == spec


def test_custom_nonlinearity_cannot_be_dumped() -> None:
    spec = ProblemSpec(nonlinearity=Nonlinearity.frozen(1.0))
    with pytest.raises(ConfigurationError):
        dump_config(spec)


def test_lambda_grid() -> None:
    grid = RunOptions(lambda_min=0.1, lambda_max=10.0, lambda_points=3).lambda_grid(None)
    assert grid == pytest.approx([0.1, 1.0, 10.0])
    assert len(RunOptions(lambda_points=5).lambda_grid(None)) == 5
    sp = RunOptions(p=0.4, steps=5).semipositone(0.25)
    assert (sp.p, sp.steps, sp.q) == (0.4, 5, 0.25)
