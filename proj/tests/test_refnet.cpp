#include <gtest/gtest.h>

#include <cmath>

#include "quantdemoire/bench.hpp"
#include "quantdemoire/checkpoint.hpp"
#include "quantdemoire/error.hpp"
#include "quantdemoire/model.hpp"
#include "quantdemoire/pipeline.hpp"
#include "quantdemoire/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace qdm;
using qdm::testing::DoubleNet;
using qdm::testing::oracle_conv;
using qdm::testing::random_tensor;

namespace {

Tensor oracle_forward(const ModelGraph& m, const Tensor& x) {
    Tensor cur = x;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        const auto& layer = m.layers()[l];
        Tensor y = oracle_conv(cur, layer.weight, layer.bias, layer.dilation, PadMode::Zero);
        if (l + 1 < m.layers().size()) {
            for (float& v : y.storage()) v = v > 0.0f ? v : 0.0f;
        } else {
            for (std::size_t i = 0; i < y.numel(); ++i) y[i] += x[i];
        }
        cur = std::move(y);
    }
    return cur;
}

ModelGraph with_random_bias(std::uint64_t seed) {
    ModelGraph m = ModelGraph::initialized(seed);
    Rng r(seed + 1);
    for (auto& l : m.layers())
        for (float& b : l.bias) b = static_cast<float>(r.uniform(-0.1, 0.1));
    return m;
}

std::vector<ImagePair> tiny_set(std::uint64_t seed, std::size_t n, std::int64_t side) {
    std::vector<ImagePair> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_pair(derive_seed(seed, i), side, side));
    return out;
}

}  // namespace

TEST(ModelTest, ArchitectureAndCounts) {
    const ModelGraph m = ModelGraph::initialized(1);
    ASSERT_EQ(m.layers().size(), 5u);
    const std::vector<Dims> want = {{16, 3, 3, 3}, {16, 16, 3, 3}, {32, 16, 3, 3}, {16, 32, 3, 3}, {3, 16, 3, 3}};
    const std::vector<int> dil = {1, 2, 1, 2, 1};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(m.layers()[i].weight.dims(), want[i]);
        EXPECT_EQ(m.layers()[i].dilation, dil[i]);
    }
    EXPECT_EQ(m.parameter_count(), 12384u + 83u);
    EXPECT_FALSE(m.quantized());
}

TEST(ModelTest, KaimingUniformInit) {
    const ModelGraph m = ModelGraph::initialized(3);
    for (const auto& l : m.layers()) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.dim(1) * 9));
        EXPECT_LE(max_abs(l.weight.data()), bound);
        EXPECT_GT(max_abs(l.weight.data()), 0.5 * bound);
        for (float b : l.bias) EXPECT_EQ(b, 0.0f);
    }
    EXPECT_EQ(to_checkpoint(ModelGraph::initialized(3)).entries, to_checkpoint(m).entries);
}

TEST(ModelTest, ZeroModelIsResidualIdentity) {
    Rng r(1);
    ModelGraph m = ModelGraph::zeros();
    const Tensor x = random_tensor(r, {1, 3, 9, 10}, 0.0, 1.0);
    EXPECT_EQ(m.forward(x, ForwardMode::FP32), x);
}

TEST(ModelTest, ForwardMatchesOracleComposition) {
    Rng r(2);
    ModelGraph m = with_random_bias(5);
    const Tensor x = random_tensor(r, {1, 3, 12, 11}, 0.0, 1.0);
    const Tensor y = m.forward(x, ForwardMode::FP32);
    EXPECT_EQ(y, oracle_forward(m, x));
    EXPECT_EQ(m.forward(x, ForwardMode::FP32), y);
}

TEST(ModelTest, ForwardErrors) {
    ModelGraph m = ModelGraph::initialized(1);
    EXPECT_THROW(m.forward(Tensor({1, 3, 7, 8}), ForwardMode::FP32), Error);
    EXPECT_THROW(m.forward(Tensor({1, 2, 8, 8}), ForwardMode::FP32), Error);
    try {
        m.forward(Tensor({1, 3, 8, 8}), ForwardMode::Quantized);
        FAIL() << "expected a state error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::State);
    }
    ModelGraph fresh = ModelGraph::initialized(1);
    EXPECT_THROW(fresh.backward(Tensor({1, 3, 8, 8})), Error);
    EXPECT_THROW(fresh.set_quant({}), Error);
}

TEST(ModelTest, ZeroUpstreamGivesZeroGradients) {
    Rng r(3);
    ModelGraph m = with_random_bias(6);
    const Tensor x = random_tensor(r, {1, 3, 8, 8}, 0.0, 1.0);
    m.forward(x, ForwardMode::FP32);
    const Gradients g = m.backward(Tensor({1, 3, 8, 8}, 0.0f));
    for (const auto& w : g.weight) EXPECT_EQ(max_abs(w.data()), 0.0f);
    for (const auto& b : g.bias) EXPECT_EQ(max_abs(b), 0.0f);
}

TEST(ModelTest, ZeroModelGradientsFollowReluConvention) {
    Rng r(4);
    ModelGraph m = ModelGraph::zeros();
    const Tensor x = random_tensor(r, {1, 3, 8, 8}, 0.0, 1.0);
    const Tensor out = m.forward(x, ForwardMode::FP32);
    const Tensor up(out.dims(), 1.0f / static_cast<float>(out.numel()));
    const Gradients g = m.backward(up);
    // Hidden pre-activations are exactly zero, where the ReLU derivative is taken as zero,
    // so only the last layer's bias sees the loss.
    for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(max_abs(g.weight[l].data()), 0.0f);
    for (float b : g.bias[4]) EXPECT_NEAR(b, 1.0 / 3.0, 1e-6);
}

TEST(ModelTest, FirstLayerGradientIsMeanPooledPatches) {
    Rng r(5);
    const Tensor x = random_tensor(r, {1, 3, 8, 8}, 0.0, 1.0);
    const Tensor w({2, 3, 3, 3}, 0.0f);
    const Tensor up({1, 2, 8, 8}, 1.0f / 128.0f);
    const Tensor gw = conv2d_backward_weight(up, x, w.dims(), {});
    for (std::int64_t co = 0; co < 2; ++co)
        for (std::int64_t ci = 0; ci < 3; ++ci)
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    double s = 0.0;
                    for (int y = 0; y < 8; ++y)
                        for (int xx = 0; xx < 8; ++xx) {
                            const int iy = y + ky - 1, ix = xx + kx - 1;
                            if (iy >= 0 && iy < 8 && ix >= 0 && ix < 8) s += x.at(0, ci, iy, ix);
                        }
                    EXPECT_NEAR(gw.at(co, ci, ky, kx), s / 128.0, 1e-3 * std::abs(s / 128.0));
                }
}

TEST(ModelTest, FullNetworkGradientsMatchFiniteDifferences) {
    Rng r(6);
    ModelGraph m = with_random_bias(11);
    const Tensor x = random_tensor(r, {1, 3, 8, 8}, 0.0, 1.0);
    const Tensor rw = random_tensor(r, {1, 3, 8, 8});
    m.forward(x, ForwardMode::FP32);
    const Gradients g = m.backward(rw);

    const double h = 1e-3;
    int checked = 0;
    double worst = 0.0;
    for (int k = 0; checked < 120 && k < 1000; ++k) {
        const std::size_t layer = r.below(5);
        const bool bias = r.below(4) == 0;
        DoubleNet plus(m), minus(m), base(m);
        auto& vp = bias ? plus.b[layer] : plus.w[layer];
        auto& vm = bias ? minus.b[layer] : minus.w[layer];
        const std::size_t i = r.below(vp.size());
        vp[i] += h;
        vm[i] -= h;
        std::vector<signed char> p0, p1, p2;
        base.loss(x, rw, &p0);
        const double lp = plus.loss(x, rw, &p1);
        const double lm = minus.loss(x, rw, &p2);
        if (p0 != p1 || p0 != p2) continue;
        const double fd = (lp - lm) / (2 * h);
        const double an = bias ? g.bias[layer][i] : g.weight[layer][i];
        const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
        worst = std::max(worst, err);
        EXPECT_LT(err, 1e-2) << "layer " << layer << (bias ? " bias " : " weight ") << i << ": " << an << " vs " << fd;
        ++checked;
    }
    EXPECT_EQ(checked, 120);
}

TEST(ModelTest, BoundGradientsComposeLayerwiseSte) {
    const auto calib = tiny_set(21, 2, 16);
    const ModelGraph fp32 = with_random_bias(12);
    QuantizeConfig qc;
    qc.method = QuantMethod::Sample;
    qc.sampler = {1.0, 0.2, 3};
    QuantizeResult qr = quantize_model(fp32, calib, qc);
    ModelGraph& m = qr.model;
    // give the first layer a smoothing vector so the division is exercised as well
    std::vector<LayerQuant> slots = m.quant();
    slots[1].smoothing = std::vector<float>(16, 1.5f);
    m.set_quant(slots);

    Rng r(7);
    const Tensor x = calib[0].input;
    const Tensor up = random_tensor(r, x.dims());
    const Tensor out = m.forward(x, ForwardMode::Quantized);
    const Gradients g = m.backward(up, {false, true});

    // Replay the chain by hand with the public kernels.
    std::vector<Tensor> pre(5);
    std::vector<Tensor> smoothed(5);
    Tensor cur = x;
    for (std::size_t l = 0; l < 5; ++l) {
        const auto& q = m.quant()[l];
        smoothed[l] = q.smoothing.empty() ? cur : smooth_activation(cur, q.smoothing);
        Tensor y = conv2d(fake_quantize(smoothed[l], q.act), q.effective_weight, m.layers()[l].bias,
                          m.layers()[l].spec());
        if (l < 4) {
            pre[l] = y;
            relu_inplace(y);
        } else {
            for (std::size_t i = 0; i < y.numel(); ++i) y[i] += x[i];
        }
        cur = std::move(y);
    }
    EXPECT_EQ(cur, out);
    Tensor grad = up;
    for (std::size_t l = 5; l-- > 0;) {
        const auto& q = m.quant()[l];
        if (l < 4) relu_backward_inplace(grad, pre[l]);
        const Tensor gq = conv2d_backward_input(grad, q.effective_weight, smoothed[l].dims(), m.layers()[l].spec());
        const SteGrads ste = ste_backward(gq, smoothed[l], q.act);
        EXPECT_EQ(g.grad_lower[l], ste.grad_lower) << l;
        EXPECT_EQ(g.grad_upper[l], ste.grad_upper) << l;
        grad = q.smoothing.empty() ? ste.grad_v : smooth_activation(ste.grad_v, q.smoothing);
    }
}

TEST(ModelTest, SixteenBitQuantizedForwardIsClose) {
    const auto calib = tiny_set(22, 1, 16);
    const ModelGraph fp32 = with_random_bias(13);
    QuantizeConfig qc;
    qc.method = QuantMethod::MinMax;
    qc.bits_w = qc.bits_a = 16;
    QuantizeResult qr = quantize_model(fp32, calib, qc);
    ModelGraph ref = fp32;
    const Tensor a = ref.forward(calib[0].input, ForwardMode::FP32);
    const Tensor b = qr.model.forward(calib[0].input, ForwardMode::Quantized);
    EXPECT_LE(max_abs_diff(a, b), 1e-2);
    EXPECT_TRUE(b.all_finite());
}

TEST(AdamTest, FirstStepMagnitude) {
    std::vector<float> p = {0.0f, 5.0f};
    const std::vector<float> g = {1.0f, 1.0f};
    OptimizerState st;
    const std::span<float> pv(p);
    const std::span<const float> gv(g);
    adam_step(st, std::span(&pv, 1), std::span(&gv, 1), 1e-3);
    EXPECT_NEAR(p[0], -0.000999999, 1e-8);
    EXPECT_FLOAT_EQ(p[0], static_cast<float>(-1e-3 / (1.0 + 1e-8)));
    EXPECT_NEAR(p[1], 5.0f - 1e-3f, 1e-6);
    EXPECT_EQ(st.t, 1);
}

TEST(AdamTest, ZeroGradientLeavesParams) {
    std::vector<float> p = {0.5f, -2.0f, 3.0f};
    const std::vector<float> g(3, 0.0f);
    OptimizerState st;
    const std::span<float> pv(p);
    const std::span<const float> gv(g);
    for (int i = 0; i < 5; ++i) adam_step(st, std::span(&pv, 1), std::span(&gv, 1), 1e-2);
    EXPECT_EQ(p, (std::vector<float>{0.5f, -2.0f, 3.0f}));
}

TEST(AdamTest, EqualGradientsGiveEqualUpdates) {
    std::vector<float> a = {1.0f}, b = {1.0f};
    const std::vector<float> g = {0.3f};
    OptimizerState st;
    const std::vector<std::span<float>> pv = {a, b};
    const std::vector<std::span<const float>> gv = {g, g};
    for (int i = 0; i < 3; ++i) adam_step(st, pv, gv, 1e-2);
    EXPECT_EQ(a, b);
    std::vector<float> wrong(2);
    const std::vector<std::span<const float>> bad = {wrong, g};
    EXPECT_THROW(adam_step(st, pv, bad, 1e-2), Error);
}

TEST(CosineTest, Endpoints) {
    EXPECT_EQ(cosine_lr(0, 10, 1e-3, 0.0), 1e-3);
    EXPECT_NEAR(cosine_lr(5, 10, 1e-3, 1e-4), 5.5e-4, 1e-15);
    EXPECT_EQ(cosine_lr(10, 10, 1e-3, 0.0), 1e-3);
    EXPECT_EQ(cosine_lr(23, 10, 1e-3, 0.0), cosine_lr(3, 10, 1e-3, 0.0));
    EXPECT_LT(cosine_lr(9, 10, 1e-3, 0.0), 0.03e-3);
    for (int s = 1; s < 10; ++s) EXPECT_LT(cosine_lr(s, 10, 1.0, 0.0), cosine_lr(s - 1, 10, 1.0, 0.0));
    EXPECT_THROW(cosine_lr(0, 0, 1.0, 0.0), Error);
}

TEST(TrainTest, ZeroEpochsKeepsWeights) {
    const auto data = tiny_set(30, 2, 16);
    ModelGraph m = ModelGraph::initialized(2);
    const ModelGraph before = m;
    const TrainResult tr = train_fp32(m, data, {0, 1e-3, 7, 0});
    EXPECT_TRUE(tr.step_loss.empty());
    EXPECT_EQ(to_checkpoint(m).entries, to_checkpoint(before).entries);
    EXPECT_THROW(train_fp32(m, {}, {1, 1e-3, 7, 0}), Error);
}

TEST(TrainTest, LossDecreasesAndIsDeterministic) {
    const auto data = tiny_set(31, 12, 24);
    ModelGraph a = ModelGraph::initialized(4), b = ModelGraph::initialized(4);
    const TrainConfig tc{6, 2e-3, 9, 16};
    const TrainResult ta = train_fp32(a, data, tc);
    const TrainResult tb = train_fp32(b, data, tc);
    EXPECT_EQ(ta.step_loss, tb.step_loss);
    EXPECT_EQ(encode_checkpoint(to_checkpoint(a)), encode_checkpoint(to_checkpoint(b)));
    ASSERT_EQ(ta.epoch_mean.size(), 6u);
    EXPECT_LT(ta.epoch_mean.back(), ta.epoch_mean.front());
    EXPECT_EQ(ta.step_loss.size(), 72u);
}

TEST(CheckpointTest, RoundTripPreservesForward) {
    const auto calib = tiny_set(40, 2, 16);
    ModelGraph fp32 = with_random_bias(14);
    QuantizeConfig qc;
    qc.sampler = {0.1, 0.1, 1};
    qc.calib.epochs = 1;
    qc.calib.crop = 16;
    QuantizeResult qr = quantize_model(fp32, calib, qc);

    const auto dir = qdm::testing::scratch_dir("ckpt");
    save_checkpoint(to_checkpoint(fp32), dir / "fp32.qdck");
    save_checkpoint(to_checkpoint(qr.model), dir / "q.qdck");
    ModelGraph fp32_back = model_from_checkpoint(load_checkpoint(dir / "fp32.qdck"));
    ModelGraph q_back = model_from_checkpoint(load_checkpoint(dir / "q.qdck"));
    EXPECT_FALSE(fp32_back.quantized());
    ASSERT_TRUE(q_back.quantized());

    const Tensor x = calib[1].input;
    EXPECT_EQ(fp32_back.forward(x, ForwardMode::FP32), fp32.forward(x, ForwardMode::FP32));
    EXPECT_EQ(q_back.forward(x, ForwardMode::Quantized), qr.model.forward(x, ForwardMode::Quantized));
    for (std::size_t l = 0; l < 5; ++l) {
        EXPECT_EQ(q_back.quant()[l].smoothing, qr.model.quant()[l].smoothing);
        EXPECT_EQ(q_back.quant()[l].weight.outlier_index, qr.model.quant()[l].weight.outlier_index);
        EXPECT_EQ(q_back.quant()[l].act_bounds.lower, qr.model.quant()[l].act_bounds.lower);
    }
    EXPECT_EQ(encode_checkpoint(to_checkpoint(q_back)), encode_checkpoint(to_checkpoint(qr.model)));
    std::filesystem::remove_all(dir);
}

TEST(CheckpointTest, ContainerErrors) {
    Checkpoint c;
    c.put("a", TensorBlob::from_tensor(Tensor({2}, 1.0f)));
    c.put("b", TensorBlob::from_tensor(Tensor({1}, 2.0f)));
    c.put("a", TensorBlob::from_tensor(Tensor({3}, 3.0f)));
    ASSERT_EQ(c.entries.size(), 2u);
    EXPECT_EQ(c.at("a").numel(), 3u);
    EXPECT_THROW(c.at("zz"), Error);

    const auto bytes = encode_checkpoint(c);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QDCK");
    EXPECT_EQ(decode_checkpoint(bytes).entries, c.entries);

    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), Error);
    EXPECT_THROW(decode_checkpoint(std::span(bytes).first(bytes.size() - 2)), Error);
    auto trailing = bytes;
    trailing.push_back(1);
    EXPECT_THROW(decode_checkpoint(trailing), Error);

    Checkpoint dup;
    dup.entries.push_back({"x", TensorBlob::from_tensor(Tensor({1}))});
    dup.entries.push_back({"x", TensorBlob::from_tensor(Tensor({1}))});
    EXPECT_THROW(decode_checkpoint(encode_checkpoint(dup)), Error);
    EXPECT_THROW(model_from_checkpoint(c), Error);
}

TEST(CheckpointTest, MixedWeightCodec) {
    Rng r(8);
    for (int bits : {3, 4, 8, 16}) {
        Tensor w = qdm::testing::gaussian_tensor(r, {4, 3, 3, 3}, 0.1);
        const MixedWeight mw = split_weights(w, 0.02, bits);
        const MixedWeight back = decode_mixed_weight(encode_mixed_weight(mw));
        EXPECT_EQ(back.normal.codes, mw.normal.codes);
        EXPECT_EQ(back.normal.dims, mw.normal.dims);
        EXPECT_EQ(back.normal.params.scale, mw.normal.params.scale);
        EXPECT_EQ(back.normal.params.zero_point, mw.normal.params.zero_point);
        EXPECT_EQ(back.outlier_index, mw.outlier_index);
        EXPECT_EQ(back.outlier_value, mw.outlier_value);
        EXPECT_EQ(back.beta, mw.beta);
        EXPECT_EQ(mixed_weight_apply(back), mixed_weight_apply(mw));
    }
    const auto bytes = encode_mixed_weight(split_weights(Tensor({2, 2}, std::vector<float>{1, 2, 3, 4}), 0.0, 4));
    EXPECT_THROW(decode_mixed_weight(std::span(bytes).first(bytes.size() - 1)), Error);
}

TEST(QuantizeModelTest, MinMaxMatchesBaselineBoundsLayerwise) {
    const auto calib = tiny_set(50, 3, 16);
    ModelGraph fp32 = with_random_bias(15);
    QuantizeConfig qc;
    qc.method = QuantMethod::MinMax;
    const QuantizeResult qr = quantize_model(fp32, calib, qc);
    for (std::size_t l = 0; l < 5; ++l) {
        std::vector<Tensor> stream;
        for (const auto& p : calib) {
            fp32.forward(p.input, ForwardMode::FP32);
            stream.push_back(fp32.cached_layer_input(l));
        }
        const Bounds b = baseline_bounds(stream, {BaselineMode::MinMax});
        EXPECT_EQ(qr.model.quant()[l].act_bounds.lower, b.lower);
        EXPECT_EQ(qr.model.quant()[l].act_bounds.upper, b.upper);
        EXPECT_TRUE(qr.model.quant()[l].smoothing.empty());
        EXPECT_EQ(qr.model.quant()[l].weight.outlier_count(), 0u);
    }
    EXPECT_TRUE(qr.calib.trace.empty());
}

TEST(QuantizeModelTest, RejectsUnsupportedWidths) {
    const auto calib = tiny_set(51, 1, 16);
    const ModelGraph fp32 = ModelGraph::initialized(1);
    QuantizeConfig qc;
    qc.bits_w = 5;
    EXPECT_THROW(quantize_model(fp32, calib, qc), Error);
    qc.bits_w = 4;
    EXPECT_THROW(quantize_model(fp32, {}, qc), Error);
}

TEST(QuantizeModelTest, FullPipelineWiring) {
    const auto calib = tiny_set(52, 3, 16);
    const ModelGraph fp32 = with_random_bias(16);
    QuantizeConfig qc;
    qc.sampler = {0.1, 0.05, 2};
    qc.beta = 0.01;
    qc.calib.epochs = 2;
    qc.calib.crop = 16;
    const QuantizeResult qr = quantize_model(fp32, calib, qc);
    ASSERT_TRUE(qr.model.quantized());
    EXPECT_EQ(qr.calib.trace.size(), 6u);
    for (std::size_t l = 0; l < 5; ++l) {
        const auto& q = qr.model.quant()[l];
        EXPECT_EQ(static_cast<std::int64_t>(q.smoothing.size()), fp32.layers()[l].weight.dim(1));
        EXPECT_GT(q.weight.outlier_count(), 0u);
        EXPECT_LT(q.act_bounds.lower, q.act_bounds.upper);
        EXPECT_EQ(q.act.bits, 4);
        EXPECT_EQ(q.weight.normal.params.bits, 4);
    }
    const QuantizeResult again = quantize_model(fp32, calib, qc);
    EXPECT_EQ(encode_checkpoint(to_checkpoint(again.model)), encode_checkpoint(to_checkpoint(qr.model)));
}

TEST(CalibrateTest, ZeroEpochsAndFp32AreNoOps) {
    const auto calib = tiny_set(60, 2, 16);
    ModelGraph fp32 = with_random_bias(17);
    CalibConfig cc;
    cc.crop = 16;
    const auto before = encode_checkpoint(to_checkpoint(fp32));
    const CalibResult r1 = calibrate(fp32, calib, cc, {});
    EXPECT_TRUE(r1.trace.empty());
    EXPECT_EQ(encode_checkpoint(to_checkpoint(fp32)), before);

    QuantizeConfig qc;
    qc.method = QuantMethod::Sample;
    QuantizeResult qr = quantize_model(fp32, calib, qc);
    const auto qbefore = encode_checkpoint(to_checkpoint(qr.model));
    cc.epochs = 0;
    EXPECT_TRUE(calibrate(qr.model, calib, cc, {}).trace.empty());
    EXPECT_EQ(encode_checkpoint(to_checkpoint(qr.model)), qbefore);
    cc.epochs = 1;
    EXPECT_THROW(calibrate(qr.model, {}, cc, {}), Error);
    cc.crop = 32;
    EXPECT_THROW(calibrate(qr.model, calib, cc, {}), Error);
}

TEST(CalibrateTest, ScheduleBoundsAndTrace) {
    const auto calib = tiny_set(61, 4, 24);
    ModelGraph fp32 = ModelGraph::initialized(18);
    train_fp32(fp32, tiny_set(62, 8, 24), {3, 2e-3, 1, 0});
    QuantizeConfig qc;
    qc.method = QuantMethod::Sample;
    QuantizeResult qr = quantize_model(fp32, calib, qc);
    CalibConfig cc;
    cc.epochs = 3;
    cc.crop = 16;
    cc.lr0 = 5e-3;
    const CalibResult res = calibrate(qr.model, calib, cc, {3});
    ASSERT_EQ(res.trace.size(), 12u);
    for (const auto& s : res.trace) {
        EXPECT_DOUBLE_EQ(s.lr, cosine_lr(s.step, 4, cc.lr0, 0.0));
        EXPECT_DOUBLE_EQ(s.loss.total, s.loss.l1 + cc.lambda_p * s.loss.lp);
    }
    EXPECT_EQ(res.trace[0].lr, cc.lr0);
    EXPECT_EQ(res.trace[4].lr, cc.lr0);
    for (const auto& q : qr.model.quant()) {
        EXPECT_GE(q.act_bounds.upper, q.act_bounds.lower + kMinBoundGap);
        EXPECT_TRUE(std::isfinite(q.act_bounds.lower) && std::isfinite(q.act_bounds.upper));
    }

    const auto dir = qdm::testing::scratch_dir("trace");
    write_trace_csv(res.trace, dir / "t.csv");
    const auto bytes = read_file_bytes(dir / "t.csv");
    const std::string text(bytes.begin(), bytes.end());
    EXPECT_EQ(text.rfind("step,lr,l1,lp,total\n0,", 0), 0u);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
    std::filesystem::remove_all(dir);
}

TEST(CalibrateTest, MethodNames) {
    for (auto m : {QuantMethod::MinMax, QuantMethod::Percentile, QuantMethod::Sample, QuantMethod::QuantDemoire})
        EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_FALSE(parse_method("lsq").has_value());
}

TEST(QuantizeModelTest, UnseenChannelsStayUnscaled) {
    const auto calib = tiny_set(53, 2, 16);
    ModelGraph fp32 = with_random_bias(19);
    fp32.layers()[0].bias[5] = -100.0f;
    QuantizeConfig qc;
    qc.sampler = {1.0, 1.0, 4};
    qc.calib.epochs = 0;
    const QuantizeResult qr = quantize_model(fp32, calib, qc);
    const auto& s = qr.model.quant()[1].smoothing;
    EXPECT_EQ(s[5], 1.0f);

    std::vector<float> maxima(16, 0.0f);
    for (const auto& p : calib) {
        fp32.forward(p.input, ForwardMode::FP32);
        const Tensor& x = fp32.cached_layer_input(1);
        const std::size_t hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
        for (std::size_t i = 0; i < x.numel(); ++i) maxima[i / hw] = std::max(maxima[i / hw], std::abs(x[i]));
    }
    const auto plain = compute_smoothing_factors(maxima, fp32.layers()[1].weight, 0.5).s;
    EXPECT_EQ(maxima[5], 0.0f);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(s[c], maxima[c] == 0.0f ? 1.0f : plain[c]) << c;
}
