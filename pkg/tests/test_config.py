import pytest

from cov2pose.config import OUT_ENV, RunConfig, load_config
from cov2pose.errors import ConfigError
from cov2pose.model import Variant


def test_defaults():
    c = RunConfig()
    assert (c.lr_stiefel, c.lr_adam, c.lam, c.batch_size, c.epochs) == (1e-2, 1e-4, 1e-3, 8, 30)
    assert (c.patience, c.factor, c.head.eps_reeig) == (4, 0.5, 1e-4)
    assert (c.dataset.n_train, c.dataset.n_val, c.dataset.n_test) == (2000, 200, 500)
    assert c.variant == Variant.FULL6D


def test_output_dir_from_env(monkeypatch):
    monkeypatch.setenv(OUT_ENV, "/tmp/somewhere")
    assert RunConfig().output_dir == "/tmp/somewhere"
    monkeypatch.delenv(OUT_ENV)
    assert RunConfig().output_dir == "cov2pose_runs"


@pytest.mark.parametrize("variant", list(Variant))
def test_yaml_round_trip(variant):
    c = RunConfig(variant=variant, seed=3, lr_adam=2.5e-4).with_overrides(["dataset.n_train=17", "backbone.channels=[4, 8, 16]"])
    back = RunConfig.from_yaml(c.to_yaml())
    assert back == c
    assert back.backbone.channels == (4, 8, 16)


def test_yaml_keys():
    text = RunConfig().to_yaml()
    for key in ("variant:", "lambda:", "lr_stiefel:", "eps_reeig:", "dataset:", "output_dir:"):
        assert key in text


def test_overrides():
    c = RunConfig().with_overrides(["lambda=1e-2", "variant=MlpHead", "epochs=3", "head.eps_reeig=1e-5"])
    assert c.lam == 1e-2 and c.variant == Variant.MLP and c.epochs == 3 and c.head.eps_reeig == 1e-5
    assert isinstance(c.lam, float)


@pytest.mark.parametrize("items", [
    ["nope=1"], ["dataset.nope=1"], ["nosection.x=1"], ["epochs"], ["epochs=2.5"], ["variant=Quat"],
    ["lr_adam=0"], ["lr_stiefel=-1"], ["epochs=0"], ["factor=1.5"], ["lambda=-1"], ["dataset.n_val=0"],
    ["lr_adam=abc"], ["head.dims=[20, 8, 4]"],
])
def test_bad_overrides(items):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(items)


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("variant: EulerSPD3\nlambda: 1e-3\ndataset:\n  n_train: 40\n")
    c = load_config(p, ["seed=9"])
    assert c.variant == Variant.EULER and c.dataset.n_train == 40 and c.seed == 9 and c.lam == 1e-3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    p.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("a: [\n")
    with pytest.raises(ConfigError):
        load_config(p)
    assert load_config() == RunConfig()
