import numpy as np
import pytest

from qdecode import cli
from qdecode.checkpoint import dumps, loads

TINY = """\
# tiny pipeline used by the command-line tests
seed = 3
hidden_dim = 8
embed_dim = 8
learning_rate = 0.12
pretrain_epochs = 2
dqn_epochs = 1
epsilon_anneal_steps = 100
corpus_vocab = 12
train_size = 30
valid_size = 5
unseen_size = 10
seen_size = 10
epsilons = 0, 0.5
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    data, model = root / "data", root / "model"
    assert run("make-corpus", "--config", cfg, "--out", data) == 0
    assert run("pretrain", "--config", cfg, "--train", data / "train.txt", "--out", model) == 0
    assert run("train-dqn", "--config", cfg, "--train", data / "train.txt", "--vocab", model / "vocab.txt",
               "--stategf", model / "stategf.ckpt", "--out", model) == 0
    return root


def models(root):
    m = root / "model"
    return ["--vocab", m / "vocab.txt", "--stategf", m / "stategf.ckpt", "--qnet", m / "qnet.ckpt"]


class TestPipeline:
    def test_outputs_present(self, pipeline):
        for name in ("corpus.txt", "train.txt", "validation.txt", "seen_test.txt", "unseen_test.txt", "manifest.txt"):
            assert (pipeline / "data" / name).is_file()
        for name in ("vocab.txt", "stategf.ckpt", "pretrain.csv", "qnet.ckpt", "dqn.csv"):
            assert (pipeline / "model" / name).is_file()
        assert (pipeline / "model" / "pretrain.csv").read_text().splitlines()[0] == "epoch,cost,train_bleu"
        assert len((pipeline / "model" / "dqn.csv").read_text().splitlines()) == 2

    def test_make_corpus_is_deterministic(self, pipeline, tmp_path):
        assert run("make-corpus", "--config", pipeline / "tiny.cfg", "--out", tmp_path) == 0
        for name in ("corpus.txt", "manifest.txt", "unseen_test.txt"):
            assert (tmp_path / name).read_bytes() == (pipeline / "data" / name).read_bytes()

    def test_seed_flag_overrides_config(self, pipeline, tmp_path):
        assert run("make-corpus", "--config", pipeline / "tiny.cfg", "--seed", 4, "--out", tmp_path) == 0
        assert (tmp_path / "corpus.txt").read_bytes() != (pipeline / "data" / "corpus.txt").read_bytes()

    def test_noop_policy_decode_matches_baseline(self, pipeline, tmp_path):
        tensors, meta = loads((pipeline / "model" / "qnet.ckpt").read_bytes())
        arrays = {k: np.zeros_like(v) for k, v in tensors.items()}
        arrays["noop_b"] = np.ones_like(arrays["noop_b"])  # no-op always wins
        noop = tmp_path / "noop.ckpt"
        noop.write_bytes(dumps(arrays, meta))
        m = pipeline / "model"
        common = ["--config", pipeline / "tiny.cfg", "--vocab", m / "vocab.txt", "--stategf", m / "stategf.ckpt",
                  "--input", pipeline / "data" / "unseen_test.txt", "--out", tmp_path]
        assert run("decode", *common, "--mode", "baseline", "--output", "base.txt") == 0
        assert run("decode", *common, "--qnet", noop, "--output", "dqn.txt") == 0
        base = (tmp_path / "base.txt").read_text()
        assert base == (tmp_path / "dqn.txt").read_text()
        assert len(base.splitlines()) == 10

    def test_decode_skips_empty_lines(self, pipeline, tmp_path):
        src = tmp_path / "in.txt"
        src.write_text("w00 w01 w02\n\n   \nw03 w04\n")
        m = pipeline / "model"
        assert run("decode", "--config", pipeline / "tiny.cfg", "--vocab", m / "vocab.txt", "--stategf",
                   m / "stategf.ckpt", "--mode", "baseline", "--input", src, "--out", tmp_path) == 0
        assert len((tmp_path / "decoded.txt").read_text().splitlines()) == 2

    def test_reference_as_candidate_scores_one(self, pipeline, tmp_path):
        d = pipeline / "data"
        assert run("eval", "--config", pipeline / "tiny.cfg", "--vocab", pipeline / "model" / "vocab.txt",
                   "--seen", d / "seen_test.txt", "--unseen", d / "unseen_test.txt", "--reference-as-candidate",
                   "--out", tmp_path) == 0
        rows = (tmp_path / "eval.csv").read_text().splitlines()
        assert rows == ["split,baseline_bleu,dqn_bleu", "seen,1.0,1.0", "unseen,1.0,1.0"]

    def test_eval_and_sweep(self, pipeline, tmp_path):
        d = pipeline / "data"
        assert run("eval", "--config", pipeline / "tiny.cfg", *models(pipeline), "--seen", d / "seen_test.txt",
                   "--unseen", d / "unseen_test.txt", "--out", tmp_path) == 0
        assert run("sweep-epsilon", "--config", pipeline / "tiny.cfg", *models(pipeline), "--test",
                   d / "unseen_test.txt", "--out", tmp_path) == 0
        sweep = (tmp_path / "sweep.csv").read_text().splitlines()
        assert sweep[0] == "epsilon,avg_bleu"
        assert [r.split(",")[0] for r in sweep[1:]] == ["0.0", "0.5"]
        for row in sweep[1:]:
            assert 0.0 <= float(row.split(",")[1]) <= 1.0


class TestErrors:
    def test_no_command(self):
        assert run() == 1

    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_missing_input_file(self, tmp_path):
        assert run("pretrain", "--train", tmp_path / "missing.txt", "--out", tmp_path) == 1
        assert list(tmp_path.iterdir()) == []

    def test_out_of_range_hyperparameter(self, tmp_path):
        assert run("make-corpus", "--hidden-dim", 0, "--out", tmp_path) == 1
        assert run("make-corpus", "--discount", 1.5, "--out", tmp_path) == 1
        assert list(tmp_path.iterdir()) == []

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("hiden_dim = 4\n")
        assert run("make-corpus", "--config", cfg, "--out", tmp_path / "o") == 1

    def test_vocab_mismatch_refused(self, pipeline, tmp_path):
        vocab = tmp_path / "vocab.txt"
        vocab.write_text((pipeline / "model" / "vocab.txt").read_text()[::-1].strip() + "\n")
        m = pipeline / "model"
        code = run("train-dqn", "--config", pipeline / "tiny.cfg", "--train", pipeline / "data" / "train.txt",
                   "--vocab", vocab, "--stategf", m / "stategf.ckpt", "--out", tmp_path / "o")
        assert code == 1
        assert not (tmp_path / "o").exists()

    def test_qnet_for_other_stategf_refused(self, pipeline, tmp_path):
        m = pipeline / "model"
        tensors, meta = loads((m / "qnet.ckpt").read_bytes())
        other = tmp_path / "qnet.ckpt"
        other.write_bytes(dumps(tensors, {**meta, "stategf_sha256": "0" * 64}))
        code = run("decode", "--config", pipeline / "tiny.cfg", "--vocab", m / "vocab.txt", "--stategf",
                   m / "stategf.ckpt", "--qnet", other, "--input", pipeline / "data" / "unseen_test.txt",
                   "--out", tmp_path / "o")
        assert code == 1

    def test_corrupt_checkpoint(self, pipeline, tmp_path):
        bad = tmp_path / "stategf.ckpt"
        bad.write_bytes((pipeline / "model" / "stategf.ckpt").read_bytes()[:40])
        m = pipeline / "model"
        assert run("decode", "--config", pipeline / "tiny.cfg", "--vocab", m / "vocab.txt", "--stategf", bad,
                   "--mode", "baseline", "--input", pipeline / "data" / "unseen_test.txt", "--out", tmp_path) == 1
        assert not (tmp_path / "decoded.txt").exists()
