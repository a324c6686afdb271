import numpy as np
import pytest

from proxytrain import gradcheck as gc
from proxytrain.autodiff import Tensor
from proxytrain.checkpoint import (CheckpointError, ConfigMismatchError, load_checkpoint,
                                   save_checkpoint)
from proxytrain.config import OUTPUT_ENV, ConfigError, parse_config
from proxytrain.losses import proxynca_pp_loss

RETRIEVAL = """
[run]
seed = 3
output_dir = runs/x

[data]
n_classes = 16
latent_dim = none

[model]
layer_norm = off

[loss]
loss = proxynca
beta = 1

[optimizer]
epochs = 2
"""


def test_parse_retrieval_config():
    run = parse_config(RETRIEVAL, "train-retrieval")
    exp = run.experiment
    assert run.seed == 3 and exp.seed == 3
    assert exp.n_classes == 16 and exp.latent_dim is None and exp.layer_norm is False
    assert (exp.loss, exp.beta, exp.epochs) == ("proxynca", 1.0, 2)
    assert str(run.output_dir) == "runs/x"


def test_config_hash_is_stable_and_sensitive():
    a = parse_config(RETRIEVAL, "train-retrieval")
    b = parse_config(RETRIEVAL, "train-retrieval")
    c = parse_config(RETRIEVAL.replace("seed = 3", "seed = 4"), "train-retrieval")
    assert a.hash() == b.hash() != c.hash()
    # the snapshot reproduces the same config
    again = parse_config(a.to_ini(), "train-retrieval")
    assert again.hash() == a.hash()


def test_all_problems_reported_together():
    text = "[run]\n[data]\nn_classes = x\nbogus = 1\n[loss]\nloss = foo\n[selftrain]\nstages = 2\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text, "train-retrieval")
    joined = "\n".join(err.value.problems)
    for fragment in ("seed: required", "n_classes", "bogus", "loss: unknown", "[selftrain]"):
        assert fragment in joined


def test_ablate_section():
    text = RETRIEVAL + "\n[ablate]\ntoggles = scale, max\nseeds = 0,1\nmode = leave_one_out\n"
    run = parse_config(text, "ablate")
    assert run.ablate == dict(toggles=["scale", "max"], seeds=[0, 1], mode="leave_one_out")
    assert parse_config(RETRIEVAL, "ablate").ablate["seeds"] == [0, 1, 2, 3, 4]
    with pytest.raises(ConfigError):
        parse_config(RETRIEVAL + "\n[ablate]\ntoggles = wings\n", "ablate")
    with pytest.raises(ConfigError):
        parse_config(text, "train-retrieval")


def test_selftrain_config_and_booleans():
    text = "[run]\nseed = 1\n[selftrain]\nstrategy = rist\ncl = yes\nn_trials = 3\n[model]\nradius = 1\n"
    exp = parse_config(text, "selftrain").experiment
    assert (exp.strategy, exp.cl, exp.n_trials, exp.radius, exp.seed) == ("rist", True, 3, 1, 1)
    with pytest.raises(ConfigError, match="boolean"):
        parse_config(text.replace("yes", "perhaps"), "selftrain")


def test_output_dir_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert parse_config(RETRIEVAL, "train-retrieval").output_dir == tmp_path


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    params = {"0.W": Tensor(rng.standard_normal((3, 4))), "proxies": rng.standard_normal((5, 4))}
    path = tmp_path / "c.npz"
    save_checkpoint(path, params, "abc", {"note": 1})
    back, meta = load_checkpoint(path, "abc")
    assert back["0.W"].tobytes() == params["0.W"].data.tobytes()
    assert back["proxies"].tobytes() == params["proxies"].tobytes()
    assert meta["config_hash"] == "abc" and meta["config"] == {"note": 1}


def test_checkpoint_refusals(tmp_path, rng):
    path = tmp_path / "c.npz"
    save_checkpoint(path, {"w": rng.standard_normal(3)}, "abc")
    with pytest.raises(ConfigMismatchError) as err:
        load_checkpoint(path, "xyz")
    assert "abc" in str(err.value) and "xyz" in str(err.value)
    blob = path.read_bytes()
    (tmp_path / "t.npz").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.npz")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    np.savez(tmp_path / "plain.npz", w=np.ones(2))
    with pytest.raises(CheckpointError, match="metadata"):
        load_checkpoint(tmp_path / "plain.npz")


def test_gradcheck_lists_every_component():
    results = gc.run_gradcheck(instances=1)
    assert [r.name for r in results] == list(gc.COMPONENTS)
    assert all(r.passed for r in results)
    assert all(line.startswith("PASS ") for line in (r.line() for r in results))


def _sign_flipped(rng):
    x, p = (Tensor(rng.standard_normal(s), requires_grad=True) for s in ((3, 2), (3, 2)))
    y = rng.integers(0, 3, 3)

    def loss():
        good = proxynca_pp_loss(x, y, p, 9.0)
        # same value, but the gradient flowing back is negated
        return Tensor.from_op(good.data, [(good, lambda g: -g)])

    return loss, dict(x=x, proxies=p)


def test_gradcheck_fault_injection_names_the_loss():
    comps = {"loss/proxynca_pp": gc.COMPONENTS["loss/proxynca_pp"], "loss/broken": _sign_flipped}
    results = gc.run_gradcheck(comps, instances=3)
    assert results[0].passed and not results[1].passed
    assert results[1].line().startswith("FAIL loss/broken")
