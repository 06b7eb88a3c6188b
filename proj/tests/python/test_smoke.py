import math

import numpy as np
import pytest

import quantdemoire as qd


def test_fake_quantize_grid():
    x = np.array([0.6, 9.0, -3.0], dtype=np.float32)
    q = qd.fake_quantize(x, 0.0, 3.0, 2)
    assert q.tolist() == [1.0, 3.0, 0.0]
    assert np.array_equal(qd.fake_quantize(q, 0.0, 3.0, 2), q)


def test_split_weights_keeps_extremes():
    w = np.array([[-10.0, -1.0, -0.5, 0.0], [0.2, 0.4, 0.9, 12.0]], dtype=np.float32)
    rec, outliers = qd.split_weights(w, 0.125, 4)
    assert outliers == [0, 7]
    assert rec[0, 0] == -10.0 and rec[1, 3] == 12.0


def test_frequency_extract_constant():
    img = np.full((1, 3, 12, 12), 0.25, dtype=np.float32)
    assert np.array_equal(qd.frequency_extract(img, 3), img)


def test_metrics_and_synthesis():
    moire, clean = qd.gen_pair(3, 32, 32)
    assert moire.shape == (1, 3, 32, 32)
    assert math.isinf(qd.psnr(clean, clean))
    assert qd.psnr(moire, clean) < 30.0
    assert qd.ssim(clean, clean) == pytest.approx(1.0)
    a, b = qd.gen_pair(3, 32, 32)
    assert np.array_equal(a, moire) and np.array_equal(b, clean)


def test_model_round_trip(tmp_path):
    pairs = [qd.gen_pair(s, 16, 16) for s in range(4)]
    model = qd.Model.initialized(1)
    losses = model.train(pairs, epochs=2, lr=2e-3)
    assert len(losses) == 2
    quant = model.quantize(pairs[:2], epochs=1, crop=16)
    assert quant.quantized and not model.quantized
    path = str(tmp_path / "q.qdck")
    quant.save(path)
    back = qd.Model.load(path)
    x = pairs[3][0]
    assert np.array_equal(back.forward(x), quant.forward(x))
    assert model.compression(4, 4, 0.0)["weight_bits"] == 4.0
    assert qd.effective_weight_bits(4, 0.005) == pytest.approx(4.06)


def test_errors_and_cli():
    with pytest.raises(qd.QuantDemoireError):
        qd.fake_quantize(np.zeros(3, dtype=np.float32), 1.0, 0.0, 4)
    with pytest.raises(qd.QuantDemoireError):
        qd.Model.load("/nonexistent/model.qdck")
    code, _, err = qd.run_cli(["quantize", "--bits-w", "5"])
    assert code == 2 and err
