import numpy as np
import pytest

from ci2pvit.cli import main
from ci2pvit.harness import load_dataset, write_ppm


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--classes", "2", "--per-class", "10",
                 "--size", "64", "--seed", "4"]) == 0
    assert main(["train-codec", "--data", str(root / "data"), "--out", str(root / "codec"),
                 "--N", "8", "--M", "12", "--steps", "3", "--seed", "0", "--plot"]) == 0
    return root


def test_gen_data_layout(workdir):
    train = load_dataset(workdir / "data" / "train")
    assert len(train) == 16 and len(load_dataset(workdir / "data" / "val")) == 4


def test_train_codec_outputs(workdir):
    out = workdir / "codec"
    assert (out / "codec.ckpt").is_file() and (out / "codec_curves.png").stat().st_size > 0
    lines = (out / "codec_metrics.csv").read_text().splitlines()
    assert lines[0] == "step,d_mse,r_bpp,lambda,total" and len(lines) == 4


def test_train_eval_and_reconstruct(workdir, capsys):
    run = workdir / "run"
    assert main(["train", "--data", str(workdir / "data"), "--out", str(run), "--variant", "ci2p_vit",
                 "--codec", str(workdir / "codec" / "codec.ckpt"), "--depth", "1", "--dim", "16",
                 "--heads", "2", "--mlp-hidden", "32", "--epochs", "2", "--plot"]) == 0
    assert {"metrics.csv", "model.ckpt", "model.cfg", "training_curves.png"} <= {p.name for p in run.iterdir()}
    assert main(["eval", "--run", str(run), "--data", str(workdir / "data" / "val")]) == 0
    assert "top1" in capsys.readouterr().out
    img = workdir / "data" / "val" / "images" / "00000.ppm"
    assert main(["reconstruct", "--codec", str(workdir / "codec" / "codec.ckpt"), "--image", str(img),
                 "--out", str(workdir / "rec")]) == 0
    csv = (workdir / "rec" / "00000_metrics.csv").read_text().splitlines()
    assert csv[0] == "psnr_db,bpp" and all(np.isfinite(float(v)) for v in csv[1].split(","))
    side = (workdir / "rec" / "00000_side_by_side.ppm").read_bytes()
    assert side.startswith(b"P6\n128 64\n255\n")


def test_train_config_file_and_random_codec(workdir):
    cfg = workdir / "train.cfg"
    cfg.write_text("# tiny ds run\nvariant=ci2p_vit_ds\ndepth=2\ndim=16\nheads=2\nmlp_hidden=32\n"
                   "codec_hidden=8\ncodec_latent=12\nds_early_dim=12\nds_split=1\nds_early_heads=2\n"
                   "ds_early_mlp=24\nepochs=1\nlr=0.001\n")
    assert main(["train", "--data", str(workdir / "data"), "--out", str(workdir / "ds"), "--config", str(cfg),
                 "--random-codec"]) == 0
    assert len((workdir / "ds" / "metrics.csv").read_text().splitlines()) == 3


def test_analyze_outputs(tmp_path, capsys):
    assert main(["analyze", "--variant", "all", "--sizes", "256,384,512", "--format", "csv",
                 "--out", str(tmp_path), "--plot"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("image_size,") and len(out) == 4
    assert (tmp_path / "flops.png").stat().st_size > 0
    assert (tmp_path / "flops_breakdown.csv").read_text().count(",total,") == 9
    assert main(["analyze", "--variant", "ci2p_vit_ds", "--sizes", "256", "--format", "csv"]) == 0
    assert "ci2p_vit_ds,256,cnn_reshape" in capsys.readouterr().out


def test_exit_codes(tmp_path, workdir):
    assert main(["analyze", "--sizes", "250"]) == 2
    assert main(["analyze", "--variant", "resnet"]) == 2
    assert main(["eval", "--run", str(tmp_path), "--data", str(tmp_path)]) == 2  # no model.cfg
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"CI2P" + bytes(20))
    img = tmp_path / "x.ppm"
    write_ppm(img, np.zeros((3, 32, 32)))
    assert main(["reconstruct", "--codec", str(bad), "--image", str(img), "--out", str(tmp_path)]) == 3
    assert main(["train", "--data", str(workdir / "data"), "--out", str(tmp_path / "r"), "--variant",
                 "ci2p_vit", "--epochs", "1"]) == 2  # needs a codec


def test_grad_check_command(capsys):
    assert main(["grad-check", "--seed", "1"]) == 0
    assert "within tolerance" in capsys.readouterr().out
