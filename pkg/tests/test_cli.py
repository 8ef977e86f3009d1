import csv
import io

import numpy as np
import pytest

from aucseg import read_segd, save_model
from aucseg.cli import main
from aucseg.train import PixelModel


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def gen_args(path, **over):
    base = dict(classes=5, images=20, size="16x16", zipf=1.0, channels=3,
                noise=0.1, seed=4)
    base.update(over)
    argv = ["gen-data", "--out", str(path)]
    for key, val in base.items():
        argv += ["--%s" % key.replace("_", "-"), str(val)]
    return argv


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["gen-data", "--classes", "5"])  # missing required args
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2


def test_gen_data_writes_parseable_dataset(tmp_path, capsys):
    path = tmp_path / "d.segd"
    code, out, err = run(capsys, *gen_args(path))
    assert code == 0 and err == ""
    items = read_segd(path)
    assert len(items) == 20
    assert items[0][0].values.shape == (16, 16, 3)


def test_gen_data_is_deterministic(tmp_path, capsys):
    p1, p2 = tmp_path / "a.segd", tmp_path / "b.segd"
    run(capsys, *gen_args(p1))
    run(capsys, *gen_args(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_train_then_eval_round_trip(tmp_path, capsys):
    data = tmp_path / "d.segd"
    run(capsys, *gen_args(data, classes=4, images=24))
    out_dir = tmp_path / "run"
    code, out, err = run(capsys, "train", "--data", str(data), "--out", str(out_dir),
                         "--max-iter", "40", "--eval-every", "20",
                         "--head-count", "1", "--middle-count", "1", "--seed", "1")
    assert code == 0, err
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "model.segm").exists()
    code, out, err = run(capsys, "eval", "--data", str(data),
                         "--model", str(out_dir / "model.segm"),
                         "--head-count", "1", "--middle-count", "1")
    assert code == 0, err
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0][:2] == ["miou", "head_miou"]
    assert len(rows) == 2
    float(rows[1][0])


def test_missing_data_file_exits_3(tmp_path, capsys):
    code, out, err = run(capsys, "train", "--data", str(tmp_path / "nope.segd"),
                         "--out", str(tmp_path / "o"))
    assert code == 3
    assert err.startswith("error: validation: ")


def test_corrupt_dataset_exits_3_with_offset(tmp_path, capsys):
    data = tmp_path / "d.segd"
    run(capsys, *gen_args(data))
    blob = bytearray(data.read_bytes())
    blob[:4] = b"JUNK"
    data.write_bytes(bytes(blob))
    code, out, err = run(capsys, "train", "--data", str(data), "--out", str(tmp_path / "o"))
    assert code == 3
    assert "byte 0" in err


def test_eval_with_overflowed_checkpoint_exits_4(tmp_path, capsys):
    data = tmp_path / "d.segd"
    run(capsys, *gen_args(data, classes=4, channels=2))
    bad = tmp_path / "bad.segm"
    with np.errstate(over="ignore"):
        save_model(bad, PixelModel(weights=np.full((2, 4), 1e308), bias=np.zeros(4)))
    code, out, err = run(capsys, "eval", "--data", str(data), "--model", str(bad),
                         "--head-count", "1", "--middle-count", "1")
    assert code == 4
    assert err.startswith("error: numerical: ")


def test_simulate_coverage_csv(capsys):
    code, out, err = run(capsys, "simulate-coverage", "--classes", "4",
                         "--pmin", "0.3", "--delta", "0.05",
                         "--trials", "2000", "--seed", "7")
    assert code == 0, err
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0][0] == "batch_size"
    assert len(rows) == 4  # required-1, required, 2x required
    required = int(rows[1][1])
    assert int(rows[2][0]) == required


def test_bench_loss_reports_both_kernels(capsys):
    code, out, err = run(capsys, "bench-loss", "--pixels", "400", "--classes", "3",
                         "--surrogate", "all", "--repeat", "1", "--seed", "2")
    assert code == 0, err
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["surrogate", "kernel", "pixels", "classes", "seconds", "loss"]
    assert len(rows) == 1 + 6  # 3 surrogates x 2 kernels
    by_kind = {}
    for kind, kernel, _, _, _, loss in rows[1:]:
        by_kind.setdefault(kind, set()).add(loss)
    for kind, losses in by_kind.items():
        assert len(losses) == 1  # fast and naive agree in print precision


def test_bench_loss_rejects_tiny_pixel_budget(capsys):
    code, out, err = run(capsys, "bench-loss", "--pixels", "3", "--classes", "4")
    assert code == 3
    assert err.startswith("error: validation: ")


def test_train_cli_deterministic_across_runs(tmp_path, capsys):
    data = tmp_path / "d.segd"
    run(capsys, *gen_args(data, classes=4, images=20))
    args = ["train", "--data", str(data), "--max-iter", "30", "--eval-every", "15",
            "--head-count", "1", "--middle-count", "1", "--seed", "9"]
    run(capsys, *args, "--out", str(tmp_path / "r1"))
    run(capsys, *args, "--out", str(tmp_path / "r2"))
    assert (tmp_path / "r1/metrics.csv").read_bytes() == (tmp_path / "r2/metrics.csv").read_bytes()
