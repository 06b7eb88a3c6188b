#include "quantdemoire/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "quantdemoire/bench.hpp"
#include "quantdemoire/checkpoint.hpp"
#include "quantdemoire/error.hpp"
#include "quantdemoire/pipeline.hpp"
#include "quantdemoire/quant.hpp"
#include "quantdemoire/report.hpp"
#include "quantdemoire/tensor_io.hpp"

namespace qdm {
namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* first = text.data();
    const char* last = first + text.size();
    std::from_chars_result r{};
    if constexpr (std::is_floating_point_v<T>) {
        r = std::from_chars(first, last, v);
    } else {
        int base = 10;
        if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
            first += 2;
            base = 16;
        }
        r = std::from_chars(first, last, v, base);
    }
    if (text.empty() || r.ec != std::errc{} || r.ptr != last)
        throw UsageError("invalid value for " + key + ": '" + text + "'");
    return v;
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw UsageError(msg);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
    f << text;
    if (!f) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

fs::path require_path(const std::string& value, const char* flag) {
    check(!value.empty(), std::string("missing required ") + flag);
    return fs::path(value);
}

fs::path prepare_out(const RunConfig& cfg) {
    fs::path out = require_path(cfg.out, "--out");
    fs::create_directories(out);
    return out;
}

ModelGraph load_model(const RunConfig& cfg) {
    return model_from_checkpoint(load_checkpoint(require_path(cfg.ckpt, "--ckpt")));
}

QuantizeConfig quantize_config(const RunConfig& cfg) {
    QuantizeConfig qc;
    qc.bits_w = cfg.bits_w;
    qc.bits_a = cfg.bits_a;
    qc.method = *parse_method(cfg.method);
    qc.sampler = SamplerConfig{cfg.gamma1, cfg.gamma2, cfg.seed};
    qc.alpha = cfg.alpha;
    qc.beta = cfg.beta;
    qc.percentile = cfg.percentile;
    qc.calib = calib_config(cfg);
    qc.freq = FreqConfig{cfg.freq_level};
    return qc;
}

struct EvalSummary {
    double psnr = 0.0;
    double ssim = 0.0;
    double input_psnr = 0.0;
    std::string csv;
};

EvalSummary evaluate(ModelGraph& model, std::span<const ImagePair> pairs) {
    check(!pairs.empty(), "no test pairs in the dataset");
    const ForwardMode mode = model.quantized() ? ForwardMode::Quantized : ForwardMode::FP32;
    EvalSummary s;
    s.csv = "index,psnr,ssim,input_psnr\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Tensor out = model.forward(pairs[i].input, mode);
        for (float& v : out.storage()) v = std::clamp(v, 0.0f, 1.0f);
        const double p = psnr(out, pairs[i].target);
        const double q = ssim(out, pairs[i].target);
        const double pin = psnr(pairs[i].input, pairs[i].target);
        s.psnr += p;
        s.ssim += q;
        s.input_psnr += pin;
        s.csv += std::to_string(i) + "," + format_db(p, 6) + "," + fmt("%.6f", q) + "," + format_db(pin, 6) + "\n";
    }
    const auto n = static_cast<double>(pairs.size());
    s.psnr /= n;
    s.ssim /= n;
    s.input_psnr /= n;
    return s;
}

std::string eval_text(const EvalSummary& s, std::size_t n) {
    return "test pairs: " + std::to_string(n) + "\npsnr: " + format_db(s.psnr) + " dB\nssim: " +
           fmt("%.4f", s.ssim) + "\ninput psnr: " + format_db(s.input_psnr) + " dB\n";
}

void write_train_trace(const TrainResult& tr, const TrainConfig& tc, const fs::path& path) {
    std::string s = "step,lr,l1\n";
    const auto total = static_cast<std::int64_t>(tr.step_loss.size());
    char buf[128];
    for (std::int64_t i = 0; i < total; ++i) {
        std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g\n", static_cast<long long>(i), cosine_lr(i, total, tc.lr0),
                      tr.step_loss[static_cast<std::size_t>(i)]);
        s += buf;
    }
    write_text(path, s);
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir = prepare_out(cfg);
    const DatasetCounts counts{static_cast<std::size_t>(cfg.n_train), static_cast<std::size_t>(cfg.n_calib),
                               static_cast<std::size_t>(cfg.n_test)};
    const DatasetManifest m = gen_dataset(cfg.seed, counts, cfg.size, cfg.size, dir);
    out << "wrote " << m.entries.size() << " pairs to " << dir.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const DatasetManifest m = read_manifest(require_path(cfg.data, "--data"));
    const fs::path dir = prepare_out(cfg);
    const auto train = load_pairs(m, Split::Train);
    ModelGraph model = ModelGraph::initialized(cfg.seed);
    const TrainConfig tc{cfg.train_epochs, cfg.train_lr, cfg.seed, 0};
    const TrainResult tr = train_fp32(model, train, tc);
    save_checkpoint(to_checkpoint(model), dir / "fp32.qdck");
    write_train_trace(tr, tc, dir / "train_trace.csv");
    out << "trained " << tc.epochs << " epochs on " << train.size() << " pairs";
    if (!tr.epoch_mean.empty()) out << ", final epoch L1 " << fmt("%.6f", tr.epoch_mean.back());
    out << "\n";
    const auto test = load_pairs(m, Split::Test);
    if (!test.empty()) {
        const EvalSummary s = evaluate(model, test);
        out << eval_text(s, test.size());
    }
    return 0;
}

int cmd_quantize(const RunConfig& cfg, std::ostream& out) {
    const ModelGraph fp32 = load_model(cfg);
    if (fp32.quantized()) fail(ErrorKind::State, "quantize expects an FP32 checkpoint");
    const DatasetManifest m = read_manifest(require_path(cfg.data, "--data"));
    const fs::path dir = prepare_out(cfg);
    const auto calib_set = load_pairs(m, Split::Calib);
    QuantizeResult qr = quantize_model(fp32, calib_set, quantize_config(cfg));
    save_checkpoint(to_checkpoint(qr.model), dir / "quantized.qdck");
    write_trace_csv(qr.calib.trace, dir / "calib_trace.csv");

    const CompressionReport cr = report_compression(qr.model, cfg.bits_w, cfg.bits_a, cfg.beta);
    write_text(dir / "compression.csv", format_compression_csv(cr));
    std::string text = "method: " + cfg.method + "\n" + format_compression_text(cr);
    const auto test = load_pairs(m, Split::Test);
    if (!test.empty()) {
        const EvalSummary s = evaluate(qr.model, test);
        write_text(dir / "eval.csv", s.csv);
        text += eval_text(s, test.size());
    }
    write_text(dir / "report.txt", text);
    out << text;
    return 0;
}

int cmd_calibrate(const RunConfig& cfg, std::ostream& out) {
    ModelGraph model = load_model(cfg);
    if (!model.quantized()) fail(ErrorKind::State, "calibrate expects a quantized checkpoint");
    const DatasetManifest m = read_manifest(require_path(cfg.data, "--data"));
    const fs::path dir = prepare_out(cfg);
    const auto calib_set = load_pairs(m, Split::Calib);
    const CalibResult cr = calibrate(model, calib_set, calib_config(cfg), FreqConfig{cfg.freq_level});
    save_checkpoint(to_checkpoint(model), dir / "calibrated.qdck");
    write_trace_csv(cr.trace, dir / "calib_trace.csv");
    out << "calibrated " << cr.epoch_mean.size() << " epochs over " << calib_set.size() << " pairs";
    if (!cr.epoch_mean.empty()) out << ", final epoch loss " << fmt("%.6f", cr.epoch_mean.back());
    out << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    ModelGraph model = load_model(cfg);
    const DatasetManifest m = read_manifest(require_path(cfg.data, "--data"));
    const auto test = load_pairs(m, Split::Test);
    const EvalSummary s = evaluate(model, test);
    const std::string text = eval_text(s, test.size());
    if (!cfg.out.empty()) {
        const fs::path dir = prepare_out(cfg);
        write_text(dir / "eval.csv", s.csv);
        write_text(dir / "eval.txt", text);
    }
    out << text;
    return 0;
}

int cmd_report(const RunConfig& cfg, std::ostream& out) {
    ModelGraph model = load_model(cfg);
    const fs::path dir = prepare_out(cfg);
    const int bits_w = model.quantized() ? cfg.bits_w : 32;
    const int bits_a = model.quantized() ? cfg.bits_a : 32;
    const CompressionReport cr = report_compression(model, bits_w, bits_a, model.quantized() ? cfg.beta : 0.0);
    write_text(dir / "compression.csv", format_compression_csv(cr));
    write_text(dir / "compression.txt", format_compression_text(cr));
    for (std::size_t i = 0; i < model.layers().size(); ++i)
        dump_histogram(model.layers()[i].weight, cfg.bins, dir / ("hist_conv" + std::to_string(i) + "_weight.csv"));
    if (!cfg.data.empty()) {
        const DatasetManifest m = read_manifest(cfg.data);
        const auto calib_set = load_pairs(m, Split::Calib);
        check(!calib_set.empty(), "no calibration pairs in the dataset");
        model.forward(calib_set.front().input, ForwardMode::FP32);
        for (std::size_t i = 0; i < model.layers().size(); ++i)
            dump_histogram(model.cached_layer_input(i), cfg.bins,
                           dir / ("hist_conv" + std::to_string(i) + "_act.csv"));
    }
    out << format_compression_text(cr);
    return 0;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    auto as_int = [&] { return parse_number<int>(key, value); };
    auto as_double = [&] { return parse_number<double>(key, value); };
    if (key == "seed") {
        cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "bits_w" || key == "bits_a") {
        const int b = as_int();
        check(supported_bit_width(b), "unsupported bit width for " + key + ": " + value + " (use 3, 4, 6, 8 or 16)");
        (key == "bits_w" ? cfg.bits_w : cfg.bits_a) = b;
    } else if (key == "beta") {
        cfg.beta = as_double();
        check(cfg.beta >= 0.0 && cfg.beta < 0.5, "beta must be in [0, 0.5)");
    } else if (key == "gamma1" || key == "gamma2") {
        const double g = as_double();
        check(g > 0.0 && g <= 1.0, key + " must be in (0, 1]");
        (key == "gamma1" ? cfg.gamma1 : cfg.gamma2) = g;
    } else if (key == "alpha") {
        cfg.alpha = as_double();
        check(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "alpha must be in [0, 1]");
    } else if (key == "freq_level") {
        cfg.freq_level = as_int();
        check(cfg.freq_level >= 0 && cfg.freq_level <= 8, "freq_level must be in [0, 8]");
    } else if (key == "epochs") {
        cfg.epochs = as_int();
        check(cfg.epochs >= 0, "epochs must be >= 0");
    } else if (key == "lr") {
        cfg.lr = as_double();
        check(cfg.lr > 0.0, "lr must be positive");
    } else if (key == "lambda_p") {
        cfg.lambda_p = as_double();
        check(cfg.lambda_p >= 0.0, "lambda_p must be >= 0");
    } else if (key == "crop") {
        cfg.crop = as_int();
        check(cfg.crop >= 8, "crop must be >= 8");
    } else if (key == "method") {
        check(parse_method(value).has_value(), "unknown method '" + value + "'");
        cfg.method = value;
    } else if (key == "out") {
        cfg.out = value;
    } else if (key == "ckpt") {
        cfg.ckpt = value;
    } else if (key == "data") {
        cfg.data = value;
    } else if (key == "train_epochs") {
        cfg.train_epochs = as_int();
        check(cfg.train_epochs >= 0, "train_epochs must be >= 0");
    } else if (key == "train_lr") {
        cfg.train_lr = as_double();
        check(cfg.train_lr > 0.0, "train_lr must be positive");
    } else if (key == "n_train" || key == "n_calib" || key == "n_test") {
        const int n = as_int();
        check(n >= 0 && n <= 100000, key + " must be in [0, 100000]");
        (key == "n_train" ? cfg.n_train : key == "n_calib" ? cfg.n_calib : cfg.n_test) = n;
    } else if (key == "size") {
        cfg.size = as_int();
        check(cfg.size >= 16 && cfg.size <= 4096, "size must be in [16, 4096]");
    } else if (key == "percentile") {
        cfg.percentile = as_double();
        check(cfg.percentile > 0.5 && cfg.percentile <= 1.0, "percentile must be in (0.5, 1]");
    } else if (key == "bins") {
        cfg.bins = as_int();
        check(cfg.bins >= 2, "bins must be >= 2");
    } else {
        throw UsageError("unknown config key '" + key + "'");
    }
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        set_config_value(cfg, key, line.substr(eq + 1));
    }
}

void validate(const RunConfig& cfg) {
    check(cfg.n_train + cfg.n_calib + cfg.n_test > 0, "dataset counts are all zero");
}

CalibConfig calib_config(const RunConfig& cfg) {
    CalibConfig cc;
    cc.epochs = cfg.epochs;
    cc.lr0 = cfg.lr;
    cc.crop = cfg.crop;
    cc.lambda_p = cfg.lambda_p;
    cc.seed = cfg.seed;
    return cc;
}

std::string format_config(const RunConfig& cfg) {
    std::ostringstream s;
    s << "seed = " << cfg.seed << "\nbits_w = " << cfg.bits_w << "\nbits_a = " << cfg.bits_a
      << "\nbeta = " << cfg.beta << "\ngamma1 = " << cfg.gamma1 << "\ngamma2 = " << cfg.gamma2
      << "\nalpha = " << cfg.alpha << "\nfreq_level = " << cfg.freq_level << "\nepochs = " << cfg.epochs
      << "\nlr = " << cfg.lr << "\nlambda_p = " << cfg.lambda_p << "\ncrop = " << cfg.crop
      << "\nmethod = " << cfg.method << "\ntrain_epochs = " << cfg.train_epochs << "\ntrain_lr = " << cfg.train_lr
      << "\nn_train = " << cfg.n_train << "\nn_calib = " << cfg.n_calib << "\nn_test = " << cfg.n_test
      << "\nsize = " << cfg.size << "\npercentile = " << cfg.percentile << "\nbins = " << cfg.bins << "\n";
    if (!cfg.out.empty()) s << "out = " << cfg.out << "\n";
    if (!cfg.ckpt.empty()) s << "ckpt = " << cfg.ckpt << "\n";
    if (!cfg.data.empty()) s << "data = " << cfg.data << "\n";
    return s.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Post-training quantization for image demoireing networks", "quantdemoire"};
    app.require_subcommand(1, 1);

    static const std::vector<std::string> keys = {
        "seed", "bits_w", "bits_a", "beta", "gamma1", "gamma2", "alpha", "freq_level", "epochs",
        "lr", "lambda_p", "crop", "method", "out", "ckpt", "data", "train_epochs", "train_lr",
        "n_train", "n_calib", "n_test", "size", "percentile", "bins"};
    std::map<std::string, std::string> given;
    std::map<std::string, CLI::Option*> options;
    for (const auto& key : keys) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        options[key] = app.add_option(flag, given[key]);
    }
    std::string config_path;
    app.add_option("--config", config_path, "config file of key = value lines");

    static const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "generate the synthetic paired dataset"},
        {"train", "train the FP32 backbone"},
        {"calibrate", "calibrate activation bounds of a quantized checkpoint"},
        {"quantize", "quantize an FP32 checkpoint"},
        {"eval", "evaluate a checkpoint on the test split"},
        {"report", "compression accounting and histograms"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) {
            std::ifstream f(config_path, std::ios::binary);
            if (!f) throw UsageError("cannot read config file " + config_path);
            std::ostringstream text;
            text << f.rdbuf();
            apply_config_text(cfg, text.str());
        }
        for (const auto& key : keys)
            if (options[key]->count() > 0) set_config_value(cfg, key, given[key]);
        validate(cfg);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "gen-data") return cmd_gen_data(cfg, out);
        if (command == "train") return cmd_train(cfg, out);
        if (command == "calibrate") return cmd_calibrate(cfg, out);
        if (command == "quantize") return cmd_quantize(cfg, out);
        if (command == "eval") return cmd_eval(cfg, out);
        return cmd_report(cfg, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace qdm
