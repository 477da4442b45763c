import numpy as np
import pytest

from conftest import image_samples
from fsgraph.cli import main
from fsgraph.contrastive import RawSample, save_raw_samples
from fsgraph.data import FeatureDataset, save_features
from fsgraph.evaluate import clustered_features, parse_report
from fsgraph.rng import make_rng


def write_images(path, n_classes=6, per_class=16, w=3, h=3, seed=81):
    base = image_samples(n_classes * per_class, w=w, h=h, seed=seed)
    samples = [
        RawSample(pixels=s.pixels, class_id=i // per_class)
        for i, s in enumerate(base)
    ]
    save_raw_samples(samples, str(path))


def write_feature_store(path, n_classes=6, per_class=20, dim=12, seed=82):
    ds = clustered_features(n_classes, per_class, dim, separation=10.0, seed=seed)
    save_features(ds, str(path))


def run_cli(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# --- exit codes ------------------------------------------------------------------


def test_missing_required_flag_is_usage_error(capsys):
    code, _, err = run_cli(capsys, ["pretrain", "--out", "enc.bin"])
    assert code == 2
    assert "--data" in err or "usage" in err.lower()


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, _ = run_cli(capsys, ["frobnicate"])
    assert code == 2


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_knob = 3\n")
    data = tmp_path / "d.cimg"
    write_images(data)
    code, _, err = run_cli(
        capsys,
        ["pretrain", "--data", str(data), "--out", str(tmp_path / "e.bin"),
         "--config", str(cfg)],
    )
    assert code == 2
    assert "no_such_knob" in err


def test_out_of_range_config_value_rejected(tmp_path, capsys):
    data = tmp_path / "d.cimg"
    write_images(data)
    code, _, err = run_cli(
        capsys,
        ["pretrain", "--data", str(data), "--out", str(tmp_path / "e.bin"),
         "--tau=-1"],
    )
    assert code == 2


def test_missing_input_file_is_io_error(tmp_path, capsys):
    code, _, err = run_cli(
        capsys,
        ["embed", "--encoder", str(tmp_path / "none.bin"),
         "--data", str(tmp_path / "none.cimg"), "--out", str(tmp_path / "o.cfsl")],
    )
    assert code == 3


def test_infeasible_episode_is_exit_5(tmp_path, capsys):
    feats = tmp_path / "f.cfsl"
    write_feature_store(feats, n_classes=3, per_class=4)
    code, _, err = run_cli(
        capsys,
        ["solve", "--features", str(feats), "--n", "5", "--k", "1", "--q", "15",
         "--seed", "1"],
    )
    assert code == 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_blowup_is_exit_4(tmp_path, capsys):
    data = tmp_path / "d.cimg"
    write_images(data, n_classes=2, per_class=8)
    code, _, err = run_cli(
        capsys,
        ["pretrain", "--data", str(data), "--out", str(tmp_path / "e.bin"),
         "--pretrain-lr", "1e200", "--pretrain-epochs", "4",
         "--embed-dim", "4", "--hidden-dims", "8"],
    )
    assert code == 4


# --- pretrain / embed / solve chain ---------------------------------------------------


@pytest.fixture()
def tiny_pipeline(tmp_path):
    data = tmp_path / "imgs.cimg"
    write_images(data)
    common = ["--embed-dim", "4", "--hidden-dims", "8",
              "--pretrain-epochs", "2", "--seed", "7"]
    enc = tmp_path / "enc.bin"
    feats = tmp_path / "feats.cfsl"
    return data, enc, feats, common


def test_pretrain_is_byte_deterministic(tiny_pipeline, capsys):
    data, enc, _, common = tiny_pipeline
    argv = ["pretrain", "--data", str(data), "--out", str(enc)] + common
    code1, out1, _ = run_cli(capsys, argv)
    bytes1 = open(enc, "rb").read()
    code2, out2, _ = run_cli(capsys, argv)
    assert code1 == code2 == 0
    assert out1 == out2
    assert open(enc, "rb").read() == bytes1
    # per-epoch loss trace shows up
    assert len([l for l in out1.splitlines() if not l.startswith("#")]) == 2


def test_embed_writes_double_width_features(tiny_pipeline, capsys):
    data, enc, feats, common = tiny_pipeline
    assert run_cli(capsys, ["pretrain", "--data", str(data), "--out", str(enc)] + common)[0] == 0
    code, out, _ = run_cli(
        capsys, ["embed", "--encoder", str(enc), "--data", str(data), "--out", str(feats)]
    )
    assert code == 0
    from fsgraph.data import load_features

    ds = load_features(str(feats))
    assert ds.dim == 8
    assert ds.n_records == 96


def test_solve_prints_one_line_per_query(tiny_pipeline, capsys):
    data, enc, feats, common = tiny_pipeline
    run_cli(capsys, ["pretrain", "--data", str(data), "--out", str(enc)] + common)
    run_cli(capsys, ["embed", "--encoder", str(enc), "--data", str(data), "--out", str(feats)])
    argv = ["solve", "--features", str(feats), "--n", "5", "--k", "1", "--q", "15",
            "--seed", "3", "--stage2-epochs", "50"]
    code, out, _ = run_cli(capsys, argv)
    assert code == 0
    rows = [l for l in out.splitlines() if l and not l.startswith("#")]
    assert len(rows) == 75
    # identical invocation -> identical stdout
    code2, out2, _ = run_cli(capsys, argv)
    assert code2 == 0
    assert out == out2


def test_solve_ablation_flags_run(tiny_pipeline, capsys):
    data, enc, feats, common = tiny_pipeline
    run_cli(capsys, ["pretrain", "--data", str(data), "--out", str(enc)] + common)
    run_cli(capsys, ["embed", "--encoder", str(enc), "--data", str(data), "--out", str(feats)])
    code, out, _ = run_cli(
        capsys,
        ["solve", "--features", str(feats), "--n", "3", "--k", "1", "--q", "2",
         "--seed", "4", "--no-aug", "--no-distill"],
    )
    assert code == 0
    assert len([l for l in out.splitlines() if l and not l.startswith("#")]) == 6


# --- eval ------------------------------------------------------------------------


def test_eval_synthetic_plain_report(capsys):
    code, out, err = run_cli(
        capsys,
        ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=8",
         "--tasks", "3", "--n", "5", "--k", "1", "--q", "3", "--seed", "2",
         "--stage2-epochs", "50"],
    )
    assert code == 0
    rep = parse_report(out)
    assert len(rep.per_task) == 3
    assert rep.config_echo["n_way"] == "5"


def test_eval_features_file(tmp_path, capsys):
    feats = tmp_path / "f.cfsl"
    write_feature_store(feats, dim=16)
    code, out, _ = run_cli(
        capsys,
        ["eval", "--features", str(feats), "--tasks", "2", "--n", "5", "--k", "1",
         "--q", "2", "--seed", "3", "--stage2-epochs", "50"],
    )
    assert code == 0
    assert len(parse_report(out).per_task) == 2


def test_eval_requires_exactly_one_source(tmp_path, capsys):
    code, _, _ = run_cli(
        capsys, ["eval", "--tasks", "1", "--n", "5", "--k", "1", "--q", "1"]
    )
    assert code == 2
    feats = tmp_path / "f.cfsl"
    write_feature_store(feats)
    code, _, _ = run_cli(
        capsys,
        ["eval", "--features", str(feats), "--synthetic", "clusters=5",
         "--tasks", "1", "--n", "5", "--k", "1", "--q", "1"],
    )
    assert code == 2


def test_eval_sweep_table(capsys):
    code, out, _ = run_cli(
        capsys,
        ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=12",
         "--tasks", "2", "--n", "5", "--k", "1", "--q", "2", "--seed", "4",
         "--sweep-k", "1,2", "--stage2-epochs", "20"],
    )
    assert code == 0
    lines = out.splitlines()
    header = [l for l in lines if l.startswith("# variant")]
    assert header and header[0].split("\t")[1:] == ["k=1", "k=2"]
    rows = [l for l in lines if l and not l.startswith("#")]
    assert len(rows) == 1
    cells = rows[0].split("\t")
    assert cells[0] == "full"
    assert all("+-" in c for c in cells[1:])


def test_eval_ablate_table(capsys):
    code, out, _ = run_cli(
        capsys,
        ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=8",
         "--tasks", "2", "--n", "5", "--k", "1", "--q", "2", "--seed", "5",
         "--ablate", "--stage2-epochs", "20"],
    )
    assert code == 0
    rows = [l for l in out.splitlines() if l and not l.startswith("#")]
    assert [r.split("\t")[0] for r in rows] == ["full", "no_distill", "no_aug", "no_both"]


def test_eval_out_file(tmp_path, capsys):
    out_path = tmp_path / "report.txt"
    code, out, _ = run_cli(
        capsys,
        ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=8",
         "--tasks", "2", "--n", "5", "--k", "1", "--q", "2", "--seed", "6",
         "--stage2-epochs", "20", "--out", str(out_path)],
    )
    assert code == 0
    assert out == ""
    rep = parse_report(out_path.read_text())
    assert len(rep.per_task) == 2


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment line\nstage2_epochs = 20\nm = 6\n")
    code, out, _ = run_cli(
        capsys,
        ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=8",
         "--tasks", "1", "--n", "5", "--k", "1", "--q", "2", "--seed", "7",
         "--config", str(cfg), "--m", "4"],
    )
    assert code == 0
    rep = parse_report(out)
    assert rep.config_echo["m"] == "4"
    assert rep.config_echo["stage2_epochs"] == "20"


def test_workers_do_not_change_output(capsys):
    argv = ["eval", "--synthetic", "clusters=5,sep=10,dim=16,per_class=8",
            "--tasks", "4", "--n", "5", "--k", "1", "--q", "2", "--seed", "8",
            "--stage2-epochs", "20"]
    _, seq, _ = run_cli(capsys, argv + ["--workers", "1"])
    _, par, _ = run_cli(capsys, argv + ["--workers", "3"])
    assert seq == par
