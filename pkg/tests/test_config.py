import pytest

from ptsr.config import Config, load_config, parse_config_text


def test_defaults():
    cfg = Config()
    assert cfg.model.depth == 5 and cfg.model.k == 8 and cfg.model.heads == 3
    assert cfg.train.lr0 == 2e-4 and cfg.train.betas == (0.0, 0.999)
    assert cfg.train.plateau_patience == 30 and cfg.train.plateau_factor == 0.2
    assert cfg.train.batch_size == 4 and cfg.train.max_epochs == 200
    assert cfg.loss.variant == "R" and cfg.train.clip_norm == 0.0


def test_text_roundtrip():
    cfg = Config().apply_overrides(["model.depth=3", "loss.variant=R1", "train.fused_bce=false"])
    again = parse_config_text(cfg.to_text())
    assert again == cfg
    assert again.train.fused_bce is False


def test_overrides_after_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmodel.depth = 3\ntrain.lr0 = 1e-4  # trailing\n")
    cfg, text = load_config(path, ["model.depth=7"])
    assert cfg.model.depth == 7 and cfg.train.lr0 == 1e-4
    assert text.startswith("# comment\nmodel.depth = 3")
    assert text.rstrip().endswith("model.depth=7")


def test_grouped_validation():
    cfg = Config().apply_overrides(["loss.w_adv=0", "loss.w_rec=1"])
    assert (cfg.loss.w_adv, cfg.loss.w_rec) == (0.0, 1.0)
    with pytest.raises(ValueError):
        Config().apply_overrides(["loss.w_adv=0"])


@pytest.mark.parametrize("bad", ["model.nope=1", "nosection.x=1", "model.depth=abc",
                                 "train.scale=3", "train.fused_bce=maybe", "justtext",
                                 "train.plateau_factor=1.5", "train.compose=sometimes"])
def test_rejections(bad):
    with pytest.raises(ValueError):
        Config().apply_overrides([bad])


def test_bad_line():
    with pytest.raises(ValueError, match="line 2"):
        parse_config_text("model.depth = 3\nnonsense\n")


def test_arch_hash():
    base = Config()
    assert base.arch_hash() == Config().arch_hash()
    assert base.with_value("train.lr0", 1e-3).arch_hash() == base.arch_hash()
    deeper = base.with_value("model.depth", 3)
    assert deeper.arch_hash() != base.arch_hash()
    assert base.arch_differences(deeper) == ["model.depth: 3 != 5"]
