import numpy as np
import pytest

from protoclr.cli import main
from protoclr.core import RngStream
from protoclr.data import EmbeddingSet, SyntheticSpec, generate, load, save
from protoclr.encoder import MlpSpec, init_params, load_checkpoint


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def trailer(report: str) -> dict[str, str]:
    lines = report.split("[trailer]\n", 1)[1].splitlines()
    return dict(line.split("=", 1) for line in lines)


def without_duration(report: str) -> str:
    return "\n".join(line for line in report.splitlines() if not line.startswith("duration_s="))


@pytest.fixture
def clustered_emb(tmp_path):
    path = tmp_path / "clustered.emb"
    spec = SyntheticSpec(num_classes=4, num_domains=2, dim=6, samples_per=12, noise_sigma=0.8, seed=3)
    save(generate(spec), path)
    return path


class TestGradcheck:
    def test_protoclr_example_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--loss", "protoclr", "--n", 32, "--d", 8, "--classes", 4,
                           "--tau", 0.5, "--trials", 20, "--seed", 7)
        assert code == 0
        t = trailer(out)
        assert t["status"] == "pass"
        assert sum(k.startswith("trial.") for k in t) == 20
        assert float(t["worst_rel_err"]) <= 1e-6

    @pytest.mark.parametrize("loss", ["supcon", "infonce", "ce"])
    def test_other_losses_pass(self, capsys, loss):
        code, _, _ = run(capsys, "gradcheck", "--loss", loss, "--n", 8, "--d", 4, "--trials", 2)
        assert code == 0

    def test_zero_tau_is_usage_error(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--loss", "supcon", "--tau", 0)
        assert code == 64
        assert "--tau" in err

    def test_singleton_anchor_fails(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--loss", "supcon", "--n", 2, "--classes", 2,
                           "--singleton-policy", "error")
        assert code == 2
        assert "SingletonAnchor" in out

    def test_impossible_threshold_fails(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--loss", "supcon", "--n", 8, "--trials", 1, "--threshold", 0)
        assert code == 2 and trailer(out)["status"] == "fail"

    def test_unknown_loss_is_usage_error(self, capsys):
        assert run(capsys, "gradcheck", "--loss", "triplet")[0] == 64


class TestSynth:
    def test_minimal_spec(self, capsys, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("# minimal\nnum_classes = 2\nnum_domains = 1\nsamples_per = 8\n")
        code, out, _ = run(capsys, "synth", "--spec", spec, "--out", tmp_path / "a.emb")
        assert code == 0
        assert "n=16" in out
        assert load(tmp_path / "a.emb").n == 16

    def test_flags_override_file(self, capsys, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("num_classes = 2\nsamples_per = 8\n")
        run(capsys, "synth", "--spec", spec, "--samples-per", 3, "--out", tmp_path / "a.csv")
        assert load(tmp_path / "a.csv").n == 6

    def test_deterministic(self, capsys, tmp_path):
        args = ["synth", "--num-classes", 3, "--num-domains", 2, "--domain-transform", "--seed", 9]
        _, out1, _ = run(capsys, *args, "--out", tmp_path / "a.emb")
        _, out2, _ = run(capsys, *args, "--out", tmp_path / "b.emb")
        assert (tmp_path / "a.emb").read_bytes() == (tmp_path / "b.emb").read_bytes()
        assert trailer(out1) == trailer(out2)

    def test_one_class_is_invalid(self, capsys, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("num_classes = 1\n")
        assert run(capsys, "synth", "--spec", spec, "--out", tmp_path / "a.emb")[0] == 65

    def test_unreadable_spec(self, capsys, tmp_path):
        assert run(capsys, "synth", "--spec", tmp_path / "missing.cfg", "--out", tmp_path / "a.emb")[0] == 66

    def test_unwritable_output(self, capsys, tmp_path):
        assert run(capsys, "synth", "--out", tmp_path / "no" / "such" / "dir.emb")[0] == 73

    def test_bad_config_value(self, capsys, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("dim = sixteen\n")
        assert run(capsys, "synth", "--spec", spec, "--out", tmp_path / "a.emb")[0] == 65


class TestTrain:
    def test_loss_decreases(self, capsys, tmp_path, clustered_emb):
        code, out, _ = run(capsys, "train", "--data", clustered_emb, "--loss", "protoclr", "--epochs", 50,
                           "--batch", 32, "--out", tmp_path / "m.mlp")
        assert code == 0
        t = trailer(out)
        assert float(t["final_loss"]) < float(t["first_loss"])
        assert "defaults:" in out

    def test_zero_lr_keeps_initialization(self, capsys, tmp_path, clustered_emb):
        code, _, _ = run(capsys, "train", "--data", clustered_emb, "--lr", 0, "--wd", 0, "--epochs", 3,
                         "--batch", 32, "--hidden", "10", "--embed-dim", 5, "--seed", 4, "--out", tmp_path / "m.mlp")
        assert code == 0
        spec, params = load_checkpoint(tmp_path / "m.mlp")
        init = init_params(MlpSpec((6, 10, 5)), RngStream(4).substream(0))
        assert spec.layer_dims == (6, 10, 5)
        for a, b in zip(params.weights + params.biases, init.weights + init.biases):
            np.testing.assert_array_equal(a, b.astype(np.float32))

    def test_deterministic(self, capsys, tmp_path, clustered_emb):
        args = ["train", "--data", clustered_emb, "--loss", "supcon", "--epochs", 3, "--batch", 16]
        _, out1, _ = run(capsys, *args, "--out", tmp_path / "a.mlp")
        _, out2, _ = run(capsys, *args, "--out", tmp_path / "b.mlp")
        assert (tmp_path / "a.mlp").read_bytes() == (tmp_path / "b.mlp").read_bytes()
        assert trailer(out1) == trailer(out2)

    def test_config_file(self, capsys, tmp_path, clustered_emb):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("loss = ce\nepochs = 2\nbatch = 16\n")
        code, out, _ = run(capsys, "train", "--data", clustered_emb, "--config", cfg, "--epochs", 3,
                           "--out", tmp_path / "m.mlp")
        assert code == 0
        assert "config.loss=ce" in out and "config.epochs=3" in out

    def test_unreadable_data(self, capsys, tmp_path):
        assert run(capsys, "train", "--data", tmp_path / "none.emb", "--out", tmp_path / "m.mlp")[0] == 66

    def test_batch_larger_than_data(self, capsys, tmp_path, clustered_emb):
        code, _, _ = run(capsys, "train", "--data", clustered_emb, "--batch", 1000, "--out", tmp_path / "m.mlp")
        assert code == 65

    def test_exclude_domain(self, capsys, tmp_path, clustered_emb):
        _, out, _ = run(capsys, "train", "--data", clustered_emb, "--exclude-domain", 1, "--epochs", 1,
                        "--batch", 16, "--out", tmp_path / "m.mlp")
        assert "rows=48" in out


class TestEval:
    def test_random_27_classes(self, capsys, tmp_path):
        rng = RngStream(27)
        es = EmbeddingSet(rng.normal((27 * 20, 32)), np.repeat(np.arange(27), 20))
        save(es, tmp_path / "r.emb")
        code, out, _ = run(capsys, "eval", "--data", tmp_path / "r.emb", "--k", 1, "--runs", 10, "--seed", 0)
        assert code == 0
        t = trailer(out)
        p, queries = 1 / 27, int(t["queries"])
        se = 100 * np.sqrt(p * (1 - p) / (queries * 10))
        assert abs(float(t["mean"]) - 100 / 27) <= 3 * se
        assert "random guessing: 3.70" in out

    def test_five_shot_beats_one_shot(self, capsys, clustered_emb):
        means = {}
        for k in (1, 5):
            _, out, _ = run(capsys, "eval", "--data", clustered_emb, "--k", k, "--seed", 2)
            means[k] = float(trailer(out)["mean"])
        assert means[5] >= means[1]

    def test_with_checkpoint(self, capsys, tmp_path, clustered_emb):
        run(capsys, "train", "--data", clustered_emb, "--epochs", 2, "--batch", 16, "--out", tmp_path / "m.mlp")
        code, out, _ = run(capsys, "eval", "--data", clustered_emb, "--checkpoint", tmp_path / "m.mlp", "--domain", 1)
        assert code == 0
        assert "input.checkpoint.sha256=" in out

    def test_checkpoint_dim_mismatch(self, capsys, tmp_path, clustered_emb):
        save(generate(SyntheticSpec(dim=3, seed=1)), tmp_path / "d3.emb")
        run(capsys, "train", "--data", tmp_path / "d3.emb", "--epochs", 1, "--batch", 16, "--out", tmp_path / "m.mlp")
        assert run(capsys, "eval", "--data", clustered_emb, "--checkpoint", tmp_path / "m.mlp")[0] == 65

    def test_class_too_small(self, capsys, tmp_path):
        save(EmbeddingSet(RngStream(0).normal((10, 3)), np.repeat([0, 1], 5)), tmp_path / "s.emb")
        code, _, err = run(capsys, "eval", "--data", tmp_path / "s.emb", "--k", 5)
        assert code == 65
        assert "class 0" in err

    def test_holdout(self, capsys, clustered_emb):
        code, out, _ = run(capsys, "eval", "--data", clustered_emb, "--holdout", 0.5, "--k", 1)
        assert code == 0
        assert int(trailer(out)["queries"]) == 4 * 12 - 4

    def test_malformed_data(self, capsys, tmp_path):
        (tmp_path / "bad.emb").write_bytes(b"XXXX" + bytes(20))
        assert run(capsys, "eval", "--data", tmp_path / "bad.emb")[0] == 66


class TestProbe:
    def test_convergence_zero(self, capsys):
        code, out, _ = run(capsys, "probe", "--probe", "convergence", "--epsilon", "0")
        assert code == 0
        assert float(trailer(out)["eps.0.0.gap"]) <= 1e-9

    def test_convergence_ordering(self, capsys):
        code, out, _ = run(capsys, "probe", "--probe", "convergence", "--epsilon", "1e-2,1e-3")
        t = trailer(out)
        assert code == 0
        assert float(t["eps.0.001.gap"]) < float(t["eps.0.01.gap"])

    def test_variance(self, capsys):
        code, out, _ = run(capsys, "probe", "--probe", "variance", "--resamples", 2000)
        assert code == 0 and trailer(out)["status"] == "pass"

    def test_variance_failure(self, capsys):
        code, _, _ = run(capsys, "probe", "--probe", "variance", "--resamples", 200, "--tolerance", 0)
        assert code == 2


class TestCost:
    def test_reference_point(self, capsys):
        code, out, _ = run(capsys, "cost", "--n", 512, "--classes", 180, "--d", 128, "--batches", 1)
        assert code == 0
        assert float(trailer(out)["ratio"]) == pytest.approx(2.82, abs=0.005)
        assert "inferred" in out

    def test_tiny(self, capsys):
        _, out, _ = run(capsys, "cost", "--n", 4, "--classes", 2, "--d", 2)
        t = trailer(out)
        assert t["supcon_macs"] == "24" and t["protoclr_macs"] == "24"

    def test_verify_instrumented(self, capsys):
        code, out, _ = run(capsys, "cost", "--n", 16, "--classes", 4, "--d", 8, "--batches", 3, "--verify-instrumented")
        assert code == 0 and trailer(out)["instrumented"] == "match"

    def test_invalid(self, capsys):
        assert run(capsys, "cost", "--n", 4, "--classes", 9, "--d", 2)[0] == 64


class TestReports:
    def test_layout(self, capsys):
        _, out, _ = run(capsys, "cost", "--n", 4, "--classes", 2, "--d", 2)
        assert out.startswith("# protoclr cost\n")
        manifest = out.split("[manifest]\n")[1].split("[trailer]")[0]
        for key in ("command=cost", "version=", "seed=0", "config.n=4", "duration_s="):
            assert key in manifest

    def test_report_file(self, capsys, tmp_path):
        _, out, _ = run(capsys, "cost", "--n", 4, "--classes", 2, "--d", 2, "--report", tmp_path / "r.txt")
        assert (tmp_path / "r.txt").read_text() == out

    def test_rerun_identical_apart_from_duration(self, capsys):
        args = ["gradcheck", "--loss", "infonce", "--n", 8, "--trials", 2, "--seed", 5]
        _, a, _ = run(capsys, *args)
        _, b, _ = run(capsys, *args)
        assert without_duration(a) == without_duration(b)

    def test_thread_env(self, capsys, monkeypatch):
        monkeypatch.setenv("PROTO_CONTRAST_THREADS", "1")
        assert run(capsys, "cost", "--n", 4, "--classes", 2, "--d", 2)[0] == 0
        monkeypatch.setenv("PROTO_CONTRAST_THREADS", "many")
        assert run(capsys, "cost", "--n", 4, "--classes", 2, "--d", 2)[0] == 64

    def test_missing_command(self, capsys):
        assert run(capsys)[0] == 64
