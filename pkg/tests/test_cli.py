import numpy as np
import pytest

from hyperadapt.cli import main, parse_config
from hyperadapt.data import synth_filter_bank
from hyperadapt.decomp import load_decomps
from hyperadapt.errors import UsageError
from hyperadapt.filteradapt import decompress, load_adapted
from hyperadapt.nn import load_model
from hyperadapt.tensor import save_tensor


@pytest.fixture()
def bank_files(tmp_path):
    bank = synth_filter_bank(4, 5, seed=0)
    wpath = tmp_path / "bank.tns"
    bpath = tmp_path / "bias.tns"
    save_tensor(bank.weights, str(wpath))
    save_tensor(bank.bias, str(bpath))
    return bank, str(wpath), str(bpath)


def write_config(tmp_path, **overrides):
    base = {
        "method": "cp",
        "rank": 2,
        "epochs": 2,
        "batch": 32,
        "synth_channels": 12,
        "synth_classes": 3,
        "synth_samples": 48,
        "synth_tile": 10,
        "bank_filters": 4,
        "bank_kernel": 3,
        "out_model": str(tmp_path / "model.mdl1"),
        "out_log": str(tmp_path / "log.csv"),
    }
    base.update(overrides)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))
    return str(path)


class TestDecomposeCmd:
    def test_rank_one_report(self, tmp_path, bank_files, capsys):
        _, wpath, bpath = bank_files
        out = tmp_path / "d.dcp"
        rc = main(["decompose", "--bank", wpath, "--kind", "cp", "--rank", "1",
                   "--out", str(out)])
        assert rc == 0
        captured = capsys.readouterr().out
        assert "mean relative error" in captured
        _, decomps, errors = load_decomps(str(out))
        assert len(decomps) == 4
        assert errors.max() <= 1e-8  # noiseless synthetic bank is exactly rank one

    def test_tucker_full_rank(self, tmp_path, bank_files):
        _, wpath, _ = bank_files
        out = tmp_path / "d.dcp"
        rc = main(["decompose", "--bank", wpath, "--kind", "tucker", "--rank", "3",
                   "--out", str(out)])
        assert rc == 0
        _, _, errors = load_decomps(str(out))
        assert errors.max() <= 1e-10

    def test_rank_zero_is_usage_error(self, tmp_path, bank_files):
        _, wpath, _ = bank_files
        rc = main(["decompose", "--bank", wpath, "--kind", "cp", "--rank", "0",
                   "--out", str(tmp_path / "d.dcp")])
        assert rc == 2

    def test_missing_input_is_io_error(self, tmp_path):
        rc = main(["decompose", "--bank", str(tmp_path / "nope.tns"), "--kind", "cp",
                   "--rank", "1", "--out", str(tmp_path / "d.dcp")])
        assert rc == 1


class TestAdaptCmd:
    def test_identity_adaptation_bytes(self, tmp_path, bank_files):
        _, wpath, _ = bank_files
        dcp = tmp_path / "d.dcp"
        adp = tmp_path / "a.adp"
        assert main(["decompose", "--bank", wpath, "--kind", "tucker", "--rank", "2",
                     "--out", str(dcp)]) == 0
        assert main(["adapt", "--decomp", str(dcp), "--channels", "3",
                     "--init", "interp", "--out", str(adp)]) == 0
        _, decomps, _ = load_decomps(str(dcp))
        layer = load_adapted(str(adp))
        source = np.stack([d.reconstruct() for d in decomps])
        assert decompress(layer).tobytes() == source.tobytes()

    def test_wide_adaptation_counts(self, tmp_path, bank_files):
        _, wpath, _ = bank_files
        dcp = tmp_path / "d.dcp"
        adp = tmp_path / "a.adp"
        main(["decompose", "--bank", wpath, "--kind", "cp", "--rank", "2",
              "--out", str(dcp)])
        assert main(["adapt", "--decomp", str(dcp), "--channels", "145",
                     "--out", str(adp)]) == 0
        layer = load_adapted(str(adp))
        assert layer.spectral.size == 4 * 2 * 145

    def test_missing_decomp_is_io_error(self, tmp_path):
        rc = main(["adapt", "--decomp", str(tmp_path / "nope.dcp"), "--channels", "8",
                   "--out", str(tmp_path / "a.adp")])
        assert rc == 1


class TestTrainCmd:
    def test_writes_model_and_log(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg]) == 0
        log = (tmp_path / "log.csv").read_text().splitlines()
        assert log[0] == "epoch,lr,train_loss,test_loss,test_accuracy"
        assert len(log) == 3
        model, meta = load_model(str(tmp_path / "model.mdl1"))
        assert meta["method"] == "cp"
        assert model.in_channels == 12

    def test_gamma_one_constant_lr_column(self, tmp_path):
        cfg = write_config(tmp_path, gamma=1.0, epochs=3)
        assert main(["train", "--config", cfg]) == 0
        rows = (tmp_path / "log.csv").read_text().splitlines()[1:]
        lrs = {row.split(",")[1] for row in rows}
        assert lrs == {"0.01"}

    def test_same_seed_identical_csv(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["train", "--config", cfg, "--seed", "5"])
        first = (tmp_path / "log.csv").read_bytes()
        main(["train", "--config", cfg, "--seed", "5"])
        assert (tmp_path / "log.csv").read_bytes() == first

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("methd = cp\n")
        assert main(["train", "--config", str(path)]) == 2

    def test_bad_method_is_usage_error(self, tmp_path):
        cfg = write_config(tmp_path, method="pca")
        assert main(["train", "--config", cfg]) == 2

    @pytest.mark.parametrize("method", ["tucker", "reduce", "scratch"])
    def test_all_methods_run(self, tmp_path, method):
        cfg = write_config(tmp_path, method=method, epochs=1)
        assert main(["train", "--config", cfg]) == 0


class TestRankSweepCmd:
    def test_params_strictly_increasing(self, tmp_path):
        cfg = write_config(tmp_path, epochs=1)
        out = tmp_path / "sweep.csv"
        assert main(["rank-sweep", "--config", cfg, "--ranks", "1,2,3",
                     "--seeds", "1", "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "rank,mean_accuracy,sem,trainable_params"
        params = [int(r.split(",")[3]) for r in rows[1:]]
        assert params == sorted(params) and len(set(params)) == 3

    def test_mean_and_sem_match_manual(self, tmp_path):
        cfg = write_config(tmp_path, epochs=1)
        out = tmp_path / "sweep.csv"
        assert main(["rank-sweep", "--config", cfg, "--ranks", "2",
                     "--seeds", "3", "--out", str(out)]) == 0
        row = out.read_text().splitlines()[1].split(",")
        accs = []
        for s in range(3):
            cfg_s = write_config(tmp_path, epochs=1, seed=s)
            main(["train", "--config", cfg_s])
            accs.append(float((tmp_path / "log.csv").read_text()
                              .splitlines()[-1].split(",")[4]))
        accs = np.array(accs)
        assert float(row[1]) == pytest.approx(accs.mean(), rel=1e-9)
        assert float(row[2]) == pytest.approx(accs.std(ddof=1) / np.sqrt(3), rel=1e-9)

    def test_duplicate_ranks_rejected(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["rank-sweep", "--config", cfg, "--ranks", "1,1",
                   "--seeds", "1", "--out", str(tmp_path / "s.csv")])
        assert rc == 2

    def test_thread_env_does_not_change_output(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, epochs=1)
        out1 = tmp_path / "s1.csv"
        out2 = tmp_path / "s2.csv"
        main(["rank-sweep", "--config", cfg, "--ranks", "1,2", "--seeds", "2",
              "--out", str(out1)])
        monkeypatch.setenv("HYPERADAPT_THREADS", "4")
        main(["rank-sweep", "--config", cfg, "--ranks", "1,2", "--seeds", "2",
              "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()

    def test_reduce_method_rejected(self, tmp_path):
        cfg = write_config(tmp_path, method="reduce")
        rc = main(["rank-sweep", "--config", cfg, "--ranks", "1,2",
                   "--seeds", "1", "--out", str(tmp_path / "s.csv")])
        assert rc == 2


def read_pgm(path):
    with open(path, "rb") as f:
        assert f.readline().strip() == b"P5"
        w, h = map(int, f.readline().split())
        assert f.readline().strip() == b"255"
        return np.frombuffer(f.read(), dtype=np.uint8).reshape(h, w)


class TestExportFiltersCmd:
    def _train_model(self, tmp_path, **overrides):
        cfg = write_config(tmp_path, epochs=1, **overrides)
        assert main(["train", "--config", cfg]) == 0
        return str(tmp_path / "model.mdl1")

    def test_one_image_per_filter_plus_composite(self, tmp_path):
        model_path = self._train_model(tmp_path)
        out_dir = tmp_path / "imgs"
        assert main(["export-filters", "--model", model_path,
                     "--out-dir", str(out_dir)]) == 0
        files = sorted(p.name for p in out_dir.iterdir())
        assert files == ["composite.pgm", "filter_000.pgm", "filter_001.pgm",
                         "filter_002.pgm", "filter_003.pgm"]

    def test_zero_filter_is_mid_gray(self, tmp_path):
        model_path = self._train_model(tmp_path)
        model, meta = load_model(model_path)
        model.named_params()["first.spectral"].value[:] = 0.0
        from hyperadapt.nn import save_model

        zero_path = tmp_path / "zero.mdl1"
        save_model(model, str(zero_path), meta)
        out_dir = tmp_path / "zimgs"
        assert main(["export-filters", "--model", str(zero_path),
                     "--out-dir", str(out_dir)]) == 0
        img = read_pgm(out_dir / "filter_000.pgm")
        assert np.array_equal(img, np.full_like(img, 128))

    def test_rank_one_filter_proportional_to_outer_product(self, tmp_path):
        model_path = self._train_model(tmp_path, rank=1)
        model, _ = load_model(model_path)
        out_dir = tmp_path / "rimgs"
        assert main(["export-filters", "--model", model_path,
                     "--out-dir", str(out_dir)]) == 0
        img = read_pgm(out_dir / "filter_000.pgm").astype(np.float64) - 127.5
        x = model.named_params()["first.x"].value[0, :, 0]
        y = model.named_params()["first.y"].value[0, :, 0]
        pattern = np.outer(x, y).ravel()
        corr = np.corrcoef(img.ravel(), pattern)[0, 1]
        assert abs(corr) >= 0.999


class TestGradcheckCmd:
    def test_default_micro_model_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "passed" in capsys.readouterr().out

    def test_sign_flip_hook_fails(self, monkeypatch, capsys):
        from hyperadapt.nn import gradcheck as gc

        monkeypatch.setattr(gc, "SIGN_FLIP_BLOCK", "head.bias")
        assert main(["gradcheck"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out

    def test_reports_worst_error_per_block(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "worst relative error" in out
        for block in ("first.spectral", "first.w1", "first.weight", "head.bias"):
            assert block in out


class TestConfigParsing:
    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\n\nmethod = tucker  # inline\nrank = 3\n")
        cfg = parse_config(str(path))
        assert cfg.method == "tucker"
        assert cfg.rank == 3

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("rank = two\n")
        with pytest.raises(UsageError):
            parse_config(str(path))

    def test_tiles_must_come_in_pairs(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train_tiles = x.tls\n")
        with pytest.raises(UsageError):
            parse_config(str(path))
