"""Smoke test for the pymmcse extension module.

Build and install first:  maturin develop -m crates/python/Cargo.toml
"""

import math
import tempfile
from pathlib import Path

import pymmcse as m


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    same = [[1.0, 2.0, 3.0]] * 4
    assert close(m.text_contrastive_loss(same, same), math.log(4))
    assert close(m.image_caption_contrastive_loss(same, same, tau_prime=0.1), math.log(4))
    assert close(m.object_phrase_contrastive_loss([(same[:3], same[:3], [True] * 3)]), math.log(3))
    assert close(m.combined_loss(1.0, 2.0, 3.0), 1.035, 1e-12)
    assert close(m.spearman([1, 2, 3, 4], [1, 3, 2, 4]), 0.8, 1e-12)

    avg, table = m.emit_report([("a", 70.8), ("b", 82.6), ("c", 75.9), ("d", 84.9),
                                ("e", 79.6), ("f", 80.8), ("g", 73.4)])
    assert m.round_half_up(avg, 1) == 78.3 and "78.3" in table

    try:
        m.text_contrastive_loss([[1.0, 0.0]], [[1.0, 0.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("single-row batch accepted")

    enc = m.ToyEncoder(hidden=16, vocab_size=256, seed=1)
    v = enc.encode("a dog near a red hat")
    assert len(v) == 16
    assert enc.encode("a dog near a red hat", view_seed=3) != v
    rows, offsets = enc.token_embeddings("a dog", max_tokens=8)
    assert len(rows) == 3 and offsets[1] == (0, 1)

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "data"
        n_rec, n_txt, n_dev, n_test, mean_pairs = m.synth_write(
            str(out), "num_records = 40\nnum_texts = 60\nnum_dev = 20\nnum_test = 20\n")
        assert (n_rec, n_txt, n_dev, n_test) == (40, 60, 20, 20)
        records = m.load_corpus(str(out / "multimodal.jsonl"))
        kept, (excluded, before, after) = m.filter_single_pair(records)
        assert len(kept) + excluded == len(records) and after >= before
        assert all(r.num_pairs >= 2 for r in kept)
        assert len(records[0].image_feature) == m.IMAGE_FEATURE_DIM

        code, stdout, stderr = m.run_cli([
            "train", "--out", str(Path(tmp) / "run"),
            "--text-corpus", str(out / "text.txt"),
            "--multimodal-corpus", str(out / "multimodal.jsonl"),
            "--dev", str(out / "dev.tsv"),
            "--learning-rate", "0.01", "--optimizer", "adam",
            "--batch-size", "8", "--max-steps", "6", "--eval-every", "3",
            "--hidden", "16", "--head-hidden", "16",
        ])
        assert code == 0, stderr
        trained = m.ToyEncoder.from_checkpoint(str(Path(tmp) / "run/checkpoints/final.ckpt"))
        assert trained.hidden == 16

        code, _, stderr = m.run_cli(["train", "--out", str(Path(tmp) / "x")])
        assert code == 4 and stderr.startswith("error[")

    print("pymmcse smoke test passed")


if __name__ == "__main__":
    main()
