#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "quantdemoire/bench.hpp"
#include "quantdemoire/checkpoint.hpp"
#include "quantdemoire/cli.hpp"
#include "quantdemoire/error.hpp"
#include "quantdemoire/freq.hpp"
#include "quantdemoire/outlier.hpp"
#include "quantdemoire/pipeline.hpp"
#include "quantdemoire/quant.hpp"
#include "quantdemoire/report.hpp"

namespace py = pybind11;
using namespace qdm;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Dims dims(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(dims), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::vector<ImagePair> to_pairs(const std::vector<std::pair<Array, Array>>& pairs) {
    std::vector<ImagePair> out;
    for (const auto& [input, target] : pairs) out.push_back({to_tensor(input), to_tensor(target)});
    return out;
}

}  // namespace

PYBIND11_MODULE(_quantdemoire, m) {
    m.doc() = "Post-training quantization toolkit for image restoration networks";

    static py::exception<Error> error(m, "QuantDemoireError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    m.def(
        "fake_quantize",
        [](const Array& x, double lower, double upper, int bits) {
            return to_array(fake_quantize(to_tensor(x), compute_qparams(lower, upper, bits)));
        },
        py::arg("x"), py::arg("lower"), py::arg("upper"), py::arg("bits"));

    m.def(
        "split_weights",
        [](const Array& w, double beta, int bits) {
            const MixedWeight mw = split_weights(to_tensor(w), beta, bits);
            return py::make_tuple(to_array(mixed_weight_apply(mw)), mw.outlier_index);
        },
        py::arg("w"), py::arg("beta"), py::arg("bits"),
        "Returns the reconstructed weights and the flat indices kept at 16 bits.");

    m.def(
        "smoothing_factors",
        [](const std::vector<float>& channel_max, const Array& w, double alpha) {
            return compute_smoothing_factors(channel_max, to_tensor(w), alpha).s;
        },
        py::arg("channel_max"), py::arg("weight"), py::arg("alpha") = 0.5);

    m.def(
        "frequency_extract", [](const Array& img, int level) { return to_array(frequency_extract(to_tensor(img), level)); },
        py::arg("img"), py::arg("level") = 3);

    m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });

    m.def(
        "gen_pair",
        [](std::uint64_t seed, std::int64_t h, std::int64_t w) {
            const ImagePair p = gen_pair(seed, h, w);
            return py::make_tuple(to_array(p.input), to_array(p.target));
        },
        py::arg("seed"), py::arg("h") = 64, py::arg("w") = 64, "Returns (moire, clean) in [1,3,H,W].");

    m.def("effective_weight_bits", &effective_weight_bits, py::arg("bits_w"), py::arg("outlier_fraction"));

    py::class_<ModelGraph>(m, "Model")
        .def_static("initialized", &ModelGraph::initialized, py::arg("seed"))
        .def_static("load", [](const std::string& path) { return model_from_checkpoint(load_checkpoint(path)); })
        .def("save", [](const ModelGraph& g, const std::string& path) { save_checkpoint(to_checkpoint(g), path); })
        .def_property_readonly("quantized", &ModelGraph::quantized)
        .def_property_readonly("parameter_count", &ModelGraph::parameter_count)
        .def(
            "forward",
            [](ModelGraph& g, const Array& x) {
                return to_array(g.forward(to_tensor(x), g.quantized() ? ForwardMode::Quantized : ForwardMode::FP32));
            },
            py::arg("x"))
        .def(
            "train",
            [](ModelGraph& g, const std::vector<std::pair<Array, Array>>& pairs, int epochs, double lr,
               std::uint64_t seed, int crop) {
                return train_fp32(g, to_pairs(pairs), {epochs, lr, seed, crop}).epoch_mean;
            },
            py::arg("pairs"), py::arg("epochs"), py::arg("lr") = 1e-3, py::arg("seed") = 7, py::arg("crop") = 0,
            "Trains in place and returns the mean L1 loss per epoch.")
        .def(
            "quantize",
            [](const ModelGraph& g, const std::vector<std::pair<Array, Array>>& calib, const std::string& method,
               int bits_w, int bits_a, double beta, int epochs, int crop, std::uint64_t seed) {
                QuantizeConfig qc;
                const auto parsed = parse_method(method);
                if (!parsed) fail(ErrorKind::InvalidArgument, "unknown method " + method);
                qc.method = *parsed;
                qc.bits_w = bits_w;
                qc.bits_a = bits_a;
                qc.beta = beta;
                qc.sampler.seed = seed;
                qc.calib.epochs = epochs;
                qc.calib.crop = crop;
                qc.calib.seed = seed;
                return quantize_model(g, to_pairs(calib), qc).model;
            },
            py::arg("calib"), py::arg("method") = "quantdemoire", py::arg("bits_w") = 4, py::arg("bits_a") = 4,
            py::arg("beta") = 0.005, py::arg("epochs") = 4, py::arg("crop") = 64, py::arg("seed") = 7)
        .def(
            "compression",
            [](const ModelGraph& g, int bits_w, int bits_a, double beta) {
                const CompressionReport r = report_compression(g, bits_w, bits_a, beta, {});
                return py::dict(py::arg("params_reduction") = r.params_reduction(),
                                py::arg("ops_reduction") = r.ops_reduction(),
                                py::arg("weight_bits") = r.weight_bits());
            },
            py::arg("bits_w") = 4, py::arg("bits_a") = 4, py::arg("beta") = 0.005);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
