import numpy as np
import pytest
from PIL import Image

from ncdiff.cli import _chunks, main

TINY = """
data.num_crops = 6
data.crop_size = 32
codec.hidden_channels = 8
codec.latent_channels = 8
codec.batch_size = 2
unet.base_channels = 8
train.log_every = 2
train.checkpoint_every = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "imgs"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(2):
        Image.fromarray((rng.random((48, 64, 3)) * 255).astype(np.uint8)).save(data / f"im{i}.png")
    (root / "tiny.cfg").write_text(TINY)
    cfg = ["--config", str(root / "tiny.cfg")]
    assert main(["train-codec", *cfg, "--data", str(data), "--out", str(root / "c.pt"), "--steps", "4"]) == 0
    assert main(["train-diffusion", *cfg, "--data", str(data), "--codec", str(root / "c.pt"), "--out", str(root / "d.pt"), "--steps", "8"]) == 0
    return root, cfg


def test_chunks():
    assert list(_chunks(0, 10, 4)) == [(0, 4), (4, 4), (8, 2)]
    assert list(_chunks(6, 10, 4)) == [(6, 2), (8, 2)]
    assert list(_chunks(10, 10, 4)) == []


def test_training_artifacts(workspace):
    root, _ = workspace
    assert (root / "c.pt.config.txt").exists()
    rows = (root / "d.pt.loss.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 8 // 2


def test_resume_matches_uninterrupted(workspace, tmp_path):
    root, cfg = workspace
    data = str(root / "imgs")
    r = tmp_path / "r.pt"
    assert main(["train-diffusion", *cfg, "--data", data, "--codec", str(root / "c.pt"), "--out", str(r), "--steps", "4"]) == 0
    assert main(["train-diffusion", *cfg, "--data", data, "--codec", str(root / "c.pt"), "--out", str(r), "--resume", str(r), "--steps", "8"]) == 0
    assert (tmp_path / "r.pt.loss.csv").read_text() == (root / "d.pt.loss.csv").read_text()


def test_diffusion_requires_codec(workspace, tmp_path, capsys):
    root, cfg = workspace
    rc = main(["train-diffusion", *cfg, "--data", str(root / "imgs"), "--codec", str(tmp_path / "none.pt"), "--out", str(tmp_path / "d.pt")])
    assert rc != 0
    assert "train the codec first" in capsys.readouterr().err
    assert not (tmp_path / "d.pt").exists()


def test_empty_dataset(workspace, tmp_path):
    _, cfg = workspace
    (tmp_path / "empty").mkdir()
    assert main(["train-codec", *cfg, "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "c.pt")]) != 0


def test_pipeline_twice_bitwise_identical(workspace, tmp_path):
    root, cfg = workspace
    img = root / "imgs" / "im0.png"
    outs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        assert main(["compress", *cfg, "--codec", str(root / "c.pt"), "--input", str(img), "--out", str(d / "x.ncdf")]) == 0
        assert main(["decompress", *cfg, "--codec", str(root / "c.pt"), "--input", str(d / "x.ncdf"), "--out", str(d / "x.png")]) == 0
        assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--input", str(d / "x.png"), "--out", str(d / "e.png"), "--steps", "2", "--guidance-lambda", "0.01"]) == 0
        outs.append([(d / n).read_bytes() for n in ("x.ncdf", "x.png", "e.png")])
    assert outs[0] == outs[1]
    assert (tmp_path / "run0" / "e.png.config.txt").read_text().count("guidance.lambda = 0.01") == 1


def test_enhance_from_bitstream(workspace, tmp_path):
    root, cfg = workspace
    img = str(root / "imgs" / "im1.png")
    bs = tmp_path / "x.ncdf"
    assert main(["compress", *cfg, "--model", str(root / "c.pt"), "--input", img, "--out", str(bs)]) == 0
    assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--input", str(bs), "--out", str(tmp_path / "a.png")]) != 0
    assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--codec", str(root / "c.pt"), "--input", str(bs), "--out", str(tmp_path / "a.png")]) == 0
    assert Image.open(tmp_path / "a.png").size == Image.open(img).size
    # without --out the result lands next to the input
    assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--codec", str(root / "c.pt"), "--input", str(bs)]) == 0
    assert (tmp_path / "x.enhanced.png").is_file()


def test_no_overwrite_without_force(workspace, tmp_path, capsys):
    root, cfg = workspace
    img = str(root / "imgs" / "im0.png")
    out = tmp_path / "x.ncdf"
    out.write_bytes(b"keep")
    assert main(["compress", *cfg, "--codec", str(root / "c.pt"), "--input", img, "--out", str(out)]) != 0
    assert out.read_bytes() == b"keep"
    assert "--force" in capsys.readouterr().err
    assert main(["compress", *cfg, "--codec", str(root / "c.pt"), "--input", img, "--out", str(out), "--force"]) == 0
    assert out.read_bytes()[:4] == b"NCDF"


def test_truncated_bitstream_fails(workspace, tmp_path):
    root, cfg = workspace
    full = tmp_path / "x.ncdf"
    assert main(["compress", *cfg, "--codec", str(root / "c.pt"), "--input", str(root / "imgs" / "im1.png"), "--out", str(full)]) == 0
    cut = tmp_path / "cut.ncdf"
    cut.write_bytes(full.read_bytes()[:-5])
    assert main(["decompress", *cfg, "--codec", str(root / "c.pt"), "--input", str(cut), "--out", str(tmp_path / "o.png")]) != 0
    assert not (tmp_path / "o.png").exists()


def test_unknown_config_key(workspace, tmp_path):
    root, cfg = workspace
    rc = main(["compress", *cfg, "--set", "codec.nope=1", "--codec", str(root / "c.pt"), "--input", str(root / "imgs" / "im0.png"), "--out", str(tmp_path / "x.ncdf")])
    assert rc != 0


def test_enhance_tiled_and_untiled(workspace, tmp_path):
    root, cfg = workspace
    img = str(root / "imgs" / "im0.png")
    assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--input", img, "--out", str(tmp_path / "t.png"), "--tile-size", "32", "--tile-overlap", "8"]) == 0
    assert main(["enhance", *cfg, "--diffusion", str(root / "d.pt"), "--input", img, "--out", str(tmp_path / "u.png"), "--no-tiling"]) == 0
    assert Image.open(tmp_path / "t.png").size == Image.open(img).size


def test_evaluate_analyze_rd(workspace, tmp_path):
    root, cfg = workspace
    data = str(root / "imgs")
    assert main(["evaluate", *cfg, "--codec", str(root / "c.pt"), "--diffusion", str(root / "d.pt"), "--data", data, "--out", str(tmp_path / "ev")]) == 0
    assert len((tmp_path / "ev" / "rd.csv").read_text().strip().splitlines()) == 1 + 2
    assert main(["analyze-noise", *cfg, "--codec", str(root / "c.pt"), "--input", str(root / "imgs" / "im0.png"), "--out", str(tmp_path / "n.json")]) == 0
    assert (tmp_path / "n.json").exists()
    assert main(["rd-curve", *cfg, "--codec", str(root / "c.pt"), "--codec", str(tmp_path / "gone.pt"), "--diffusion", str(root / "d.pt"), "--data", data, "--out", str(tmp_path / "rd")]) == 0
