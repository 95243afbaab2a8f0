"""Smoke test for the gdvig extension: build with `pip install --no-build-isolation -e crates/py`."""

import tempfile
from pathlib import Path

import gdvig

SPEC = "n_train = 16\nn_test = 8\nimage_size = 32\nseed = 2\n"
CONFIG = "image_size = 32\ngmg_channels = 16\ngdc_channels = 16,32\nlr = 1e-3\nepochs = 2\nseed = 2\n"


def main():
    assert gdvig.fused_distance([1.0, 0.0], [0.0, 1.0], 0.5, 0.25, 3.0) == 2.09375
    rows = gdvig.knn_build([[0.0], [1.0], [3.0], [3.5]], 1)
    assert rows == [[1], [0], [3], [2]], rows
    assert gdvig.auc([0.9, 0.2, 0.8, 0.1], [True, False, False, True]) == 0.5

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assert gdvig.synth_data(SPEC, tmp / "corpus") == (16, 8)
        gdvig.train(tmp / "corpus", CONFIG, tmp / "run")
        ck = gdvig.Checkpoint.load(tmp / "run")
        ids, probs = ck.predict(tmp / "corpus", "test")
        assert len(ids) == len(probs) == 8
        assert all(abs(sum(p) - 1.0) < 1e-9 for p in probs)
        report = ck.evaluate(tmp / "corpus", "test")
        assert 0.0 <= report["acc"] <= 1.0 and report["n_samples"] == 8
        heat = ck.attention(tmp / "corpus", ids[0])
        assert len(heat) == 32 and all(0.0 <= v <= 1.0 for row in heat for v in row)
        try:
            gdvig.train(tmp / "corpus", CONFIG + "nonsense = 1\n", tmp / "bad")
        except ValueError as e:
            assert "nonsense" in str(e)
        else:
            raise AssertionError("unknown config key accepted")

    checks = gdvig.gradcheck()
    assert checks and all(ok for _, _, ok in checks)
    print(f"ok: {len(checks)} gradient checks, test acc {report['acc']:.3f}")


if __name__ == "__main__":
    main()
