import numpy as np
import pytest

from main import main
from tensor import DenseMatrix, LayerSpec, ModelManifest, write_manifest, write_tensor


def test_prune_happy_path(tmp_path, small_model, capsys):
    manifest, calib = small_model
    out = tmp_path / "out"
    code = main(["prune", "--model", str(manifest), "--calib", str(calib),
                 "--sparsity", "0.5", "--selector", "magnitude", "--out", str(out)])
    assert code == 0
    assert (out / "report.json").exists()
    printed = capsys.readouterr().out
    assert "layer0" in printed and "layer1" in printed


def test_out_of_range_sparsity_is_usage_error(tmp_path, small_model, capsys):
    manifest, calib = small_model
    with pytest.raises(SystemExit) as exc:
        main(["prune", "--model", str(manifest), "--calib", str(calib),
              "--sparsity", "1.5", "--out", str(tmp_path / "out")])
    assert exc.value.code == 2
    assert "--sparsity" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_mask_file_needs_file_selector(tmp_path, small_model):
    manifest, calib = small_model
    with pytest.raises(SystemExit) as exc:
        main(["prune", "--model", str(manifest), "--calib", str(calib),
              "--mask-file", str(tmp_path), "--out", str(tmp_path / "out")])
    assert exc.value.code == 2


def test_bad_restart_policy_is_usage_error(tmp_path, small_model):
    manifest, calib = small_model
    with pytest.raises(SystemExit) as exc:
        main(["prune", "--model", str(manifest), "--calib", str(calib),
              "--restart", "sometimes", "--out", str(tmp_path / "out")])
    assert exc.value.code == 2


def test_two_four_on_indivisible_rows_is_runtime_error(tmp_path, rng):
    write_tensor(tmp_path / "fc.qptn", DenseMatrix(rng.standard_normal((6, 3))))
    write_tensor(tmp_path / "calib.qptn", DenseMatrix(rng.standard_normal((20, 6))))
    write_manifest(tmp_path / "m.json", ModelManifest((LayerSpec("fc", 6, 3, "fc.qptn"),), tmp_path))
    code = main(["prune", "--model", str(tmp_path / "m.json"), "--calib", str(tmp_path / "calib.qptn"),
                 "--pattern", "2:4", "--out", str(tmp_path / "out")])
    assert code == 1
    assert not (tmp_path / "out").exists()


def test_missing_manifest_is_runtime_error(tmp_path, small_model):
    _, calib = small_model
    code = main(["prune", "--model", str(tmp_path / "nope.json"), "--calib", str(calib),
                 "--out", str(tmp_path / "out")])
    assert code == 1


def test_report_subcommand_reprints_table(tmp_path, small_model, capsys):
    manifest, calib = small_model
    main(["prune", "--model", str(manifest), "--calib", str(calib), "--out", str(tmp_path / "out")])
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "out")]) == 0
    assert "Geometric-mean error ratio" in capsys.readouterr().out


def test_gen_synthetic_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-synthetic", "--layers", "2", "--dim", "8", "--rows", "64",
                     "--seed", "3", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["calib.qptn", "layer0.qptn", "layer1.qptn", "manifest.json"]
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_synthetic_rejects_bad_rho(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-synthetic", "--rho", "1.0", "--out", str(tmp_path / "m")])
    assert exc.value.code == 2


def test_verify_small_grid_passes(capsys):
    assert main(["verify", "--per-dim", "3", "--seed", "5"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_zero_tolerance_fails_and_dumps(tmp_path):
    code = main(["verify", "--per-dim", "2", "--tol", "0", "--out", str(tmp_path / "worst")])
    assert code == 1
    for name in ("hessian.qptn", "weights.qptn", "mask.qptn", "instance.json"):
        assert (tmp_path / "worst" / name).exists()


def test_end_to_end_byte_identical_runs(tmp_path, small_model):
    manifest, calib = small_model
    for name in ("a", "b"):
        assert main(["prune", "--model", str(manifest), "--calib", str(calib), "--seed", "9",
                     "--out", str(tmp_path / name)]) == 0
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
    assert np.any(np.frombuffer((tmp_path / "a" / "layer0.qptn").read_bytes()[28:], dtype="<f4") == 0)
