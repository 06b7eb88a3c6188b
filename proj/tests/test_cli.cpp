#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "quantdemoire/cli.hpp"
#include "quantdemoire/error.hpp"
#include "quantdemoire/report.hpp"
#include "quantdemoire/rng.hpp"
#include "quantdemoire/tensor_io.hpp"
#include "support.hpp"

using namespace qdm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    const auto b = read_file_bytes(p);
    return {b.begin(), b.end()};
}

void write_text(const fs::path& p, const std::string& s) {
    write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::vector<std::string> small_flags() {
    return {"--n-train", "6", "--n-calib", "3", "--n-test", "2", "--size", "24", "--crop", "16",
            "--train-epochs", "1", "--epochs", "1"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
}

}  // namespace

TEST(ConfigTest, ParsesKeysAndComments) {
    RunConfig cfg;
    apply_config_text(cfg, "# demo\nbits_w = 8\n  beta=0.01  # inline\n\nmethod = minmax\nseed = 0x10\n");
    EXPECT_EQ(cfg.bits_w, 8);
    EXPECT_EQ(cfg.beta, 0.01);
    EXPECT_EQ(cfg.method, "minmax");
    EXPECT_EQ(cfg.seed, 16u);
    EXPECT_EQ(cfg.bits_a, 4);

    RunConfig round;
    apply_config_text(round, format_config(cfg));
    EXPECT_EQ(format_config(round), format_config(cfg));
}

TEST(ConfigTest, RejectsBadInput) {
    RunConfig cfg;
    EXPECT_THROW(set_config_value(cfg, "bogus", "1"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "bits_w", "5"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "bits_w", "4x"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "beta", "0.5"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "gamma1", "0"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "alpha", "1.5"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "method", "lsq"), UsageError);
    EXPECT_THROW(set_config_value(cfg, "lr", "-1"), UsageError);
    EXPECT_THROW(apply_config_text(cfg, "bits_w 4\n"), UsageError);
    EXPECT_EQ(cfg.bits_w, 4);
    cfg.n_train = cfg.n_calib = cfg.n_test = 0;
    EXPECT_THROW(validate(cfg), UsageError);
}

TEST(ConfigTest, CalibSettingsFollowConfig) {
    RunConfig cfg;
    apply_config_text(cfg, "epochs = 2\nlr = 0.01\nlambda_p = 0.5\nseed = 9\ncrop = 32\n");
    const CalibConfig cc = calib_config(cfg);
    EXPECT_EQ(cc.epochs, 2);
    EXPECT_EQ(cc.lr0, 0.01);
    EXPECT_EQ(cc.lambda_p, 0.5);
    EXPECT_EQ(cc.seed, 9u);
    EXPECT_EQ(cc.crop, 32);
}

TEST(CliTest, ExitCodes) {
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"frobnicate"}).code, 2);
    EXPECT_EQ(invoke({"--help"}).code, 0);
    EXPECT_EQ(invoke({"quantize", "--bits-w", "5"}).code, 2);
    EXPECT_EQ(invoke({"train"}).code, 2);
    const Outcome missing = invoke({"eval", "--ckpt", "/nonexistent/x.qdck", "--data", "/nonexistent"});
    EXPECT_EQ(missing.code, 1);
    EXPECT_FALSE(missing.err.empty());
}

TEST(CliTest, FlagsOverrideConfigFile) {
    const auto dir = qdm::testing::scratch_dir("cfg");
    write_text(dir / "run.cfg", "bits_w = 8\nn_train = 2\nn_calib = 1\nn_test = 1\nsize = 16\n");
    const Outcome o = invoke({"gen-data", "--config", (dir / "run.cfg").string(), "--n-train", "3", "--out",
                              (dir / "d").string()});
    ASSERT_EQ(o.code, 0) << o.err;
    const std::string manifest = slurp(dir / "d" / "manifest.txt");
    EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 5);
    EXPECT_EQ(invoke({"gen-data", "--config", (dir / "absent.cfg").string(), "--out", (dir / "e").string()}).code,
              2);
    fs::remove_all(dir);
}

TEST(CliTest, EndToEndIsByteReproducible) {
    const auto dir = qdm::testing::scratch_dir("e2e");
    for (const char* tag : {"a", "b"}) {
        const fs::path root = dir / tag;
        const std::string data = (root / "d").string(), t = (root / "t").string(), q = (root / "q").string();
        ASSERT_EQ(invoke(with({"gen-data", "--out", data}, small_flags())).code, 0);
        const Outcome tr = invoke(with({"train", "--data", data, "--out", t}, small_flags()));
        ASSERT_EQ(tr.code, 0) << tr.err;
        const Outcome qr = invoke(
            with({"quantize", "--data", data, "--ckpt", t + "/fp32.qdck", "--out", q}, small_flags()));
        ASSERT_EQ(qr.code, 0) << qr.err;
        EXPECT_NE(qr.out.find("quantdemoire"), std::string::npos);
        const Outcome ev = invoke({"eval", "--data", data, "--ckpt", q + "/quantized.qdck"});
        ASSERT_EQ(ev.code, 0) << ev.err;
        const Outcome rp = invoke({"report", "--ckpt", q + "/quantized.qdck", "--data", data, "--out",
                                   (root / "r").string(), "--bins", "16"});
        ASSERT_EQ(rp.code, 0) << rp.err;
    }
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), dir / "a");
        ASSERT_TRUE(fs::exists(dir / "b" / rel)) << rel;
        EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(dir / "b" / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 30u);
    EXPECT_EQ(slurp(dir / "a" / "q" / "eval.csv").rfind("index,psnr,ssim,input_psnr\n", 0), 0u);
    EXPECT_TRUE(fs::exists(dir / "a" / "r" / "hist_conv4_act.csv"));
    EXPECT_EQ(invoke({"calibrate", "--data", (dir / "a" / "d").string(), "--ckpt",
                      (dir / "a" / "t" / "fp32.qdck").string(), "--out", (dir / "c").string()})
                  .code,
              1);
    fs::remove_all(dir);
}

TEST(CompressionTest, PlainFourBitAccounting) {
    const ModelGraph m = ModelGraph::initialized(1);
    const CompressionReport r = report_compression(m, 4, 4, 0.0, {224, 224, false});
    EXPECT_EQ(r.ops_reduction(), 0.875);
    EXPECT_DOUBLE_EQ(r.params_reduction(), 1.0 - 0.125 * 12384.0 / 12467.0);
    EXPECT_EQ(r.weight_bits(), 4.0);
    EXPECT_EQ(r.fp32_ops, 224.0 * 224.0 * 12384.0);
}

TEST(CompressionTest, OutlierFractionAndOverhead) {
    EXPECT_DOUBLE_EQ(effective_weight_bits(4, 0.005), 4.06);
    EXPECT_EQ(effective_weight_bits(8, 0.0), 8.0);
    const ModelGraph m = ModelGraph::initialized(1);
    const CompressionReport r = report_compression(m, 4, 4, 0.005, {});
    EXPECT_NEAR(r.weight_bits(), 4.06, 1e-12);
    double p = 0, o = 0;
    for (const auto& l : r.layers) {
        p += l.effective_params;
        o += l.effective_macs;
        const double cin = static_cast<double>(l.weights) / (l.bias * 9.0);
        EXPECT_EQ(l.scale_params, 2.0 * l.bias + 2.0 + cin);
    }
    EXPECT_DOUBLE_EQ(p, r.effective_params);
    EXPECT_DOUBLE_EQ(o, r.effective_ops);
    // biases, then per-channel weight scale/zero, activation bounds and smoothing vectors
    const double overhead = 83.0 + (2 * 83.0 + 2 * 5 + 83.0);
    EXPECT_NEAR(r.effective_params, 12384.0 * (0.995 * 4 + 0.005 * 48) / 32.0 + overhead, 1e-9);

    const CompressionReport fp = report_compression(m, 32, 32, 0.0, {});
    EXPECT_EQ(fp.params_reduction(), 0.0);
    EXPECT_EQ(fp.ops_reduction(), 0.0);
    EXPECT_THROW(report_compression(m, 1, 4, 0.0, {}), Error);
    EXPECT_THROW(report_compression(m, 4, 4, 0.5, {}), Error);

    const std::string csv = format_compression_csv(r);
    EXPECT_EQ(csv.rfind("layer,weights,outliers,bias,scale_params,fp32_params,effective_params,macs,effective_macs\n", 0),
              0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(HistogramTest, CountsAndEdges) {
    Rng r(1);
    const Tensor t = qdm::testing::random_tensor(r, {100}, -1.0, 1.0);
    const Histogram h = compute_histogram(t, 10);
    std::uint64_t total = 0;
    for (auto c : h.counts) total += c;
    EXPECT_EQ(total, 100u);
    EXPECT_EQ(h.lo, *std::min_element(t.data().begin(), t.data().end()));
    EXPECT_EQ(h.hi, *std::max_element(t.data().begin(), t.data().end()));

    const Histogram c = compute_histogram(Tensor({5}, 2.0f), 8);
    ASSERT_EQ(c.counts.size(), 1u);
    EXPECT_EQ(c.counts[0], 5u);
    EXPECT_THROW(compute_histogram(t, 1), Error);
    EXPECT_THROW(compute_histogram(Tensor({0}), 4), Error);
}

TEST(HistogramTest, GaussianMatchesOracle) {
    Rng r(2);
    const Tensor t = qdm::testing::gaussian_tensor(r, {4000}, 1.0);
    const Histogram h = compute_histogram(t, 64);
    const double lo = *std::min_element(t.data().begin(), t.data().end());
    const double hi = *std::max_element(t.data().begin(), t.data().end());
    std::vector<std::uint64_t> want(64, 0);
    for (float v : t.data()) {
        auto k = static_cast<std::int64_t>(std::floor((v - lo) / ((hi - lo) / 64.0)));
        ++want[static_cast<std::size_t>(std::clamp<std::int64_t>(k, 0, 63))];
    }
    EXPECT_EQ(h.counts, want);
    const std::string csv = format_histogram_csv(h);
    EXPECT_EQ(csv.rfind("bin_lo,bin_hi,count\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 65);
}
