#include "quantdemoire/checkpoint.hpp"

#include <bit>
#include <set>

#include "quantdemoire/error.hpp"

namespace qdm {

const TensorBlob* Checkpoint::find(const std::string& name) const noexcept {
    for (const auto& [k, v] : entries)
        if (k == name) return &v;
    return nullptr;
}

const TensorBlob& Checkpoint::at(const std::string& name) const {
    const TensorBlob* b = find(name);
    if (!b) fail(ErrorKind::Format, "checkpoint entry '" + name + "' is missing");
    return *b;
}

void Checkpoint::put(const std::string& name, TensorBlob blob) {
    for (auto& [k, v] : entries)
        if (k == name) {
            v = std::move(blob);
            return;
        }
    entries.emplace_back(name, std::move(blob));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out = {'Q', 'D', 'C', 'K'};
    le::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    std::set<std::string> seen;
    for (const auto& [name, blob] : ckpt.entries) {
        require(!name.empty() && name.size() <= 0xffff, ErrorKind::InvalidArgument, "bad checkpoint entry name");
        require(seen.insert(name).second, ErrorKind::InvalidArgument, "duplicate checkpoint entry name");
        le::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        const auto enc = encode_blob(blob);
        out.insert(out.end(), enc.begin(), enc.end());
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) fail(ErrorKind::Truncated, "checkpoint header truncated");
    if (!(bytes[0] == 'Q' && bytes[1] == 'D' && bytes[2] == 'C' && bytes[3] == 'K'))
        fail(ErrorKind::BadMagic, "expected QDCK magic");
    const std::uint32_t count = le::get_u32(bytes.data() + 4);
    std::size_t pos = 8;
    Checkpoint ckpt;
    std::set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        if (bytes.size() - pos < 2) fail(ErrorKind::Truncated, "checkpoint entry truncated");
        const std::size_t len = le::get_u16(bytes.data() + pos);
        pos += 2;
        if (bytes.size() - pos < len) fail(ErrorKind::Truncated, "checkpoint name truncated");
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        if (!seen.insert(name).second) fail(ErrorKind::Format, "duplicate checkpoint entry '" + name + "'");
        std::size_t consumed = 0;
        TensorBlob blob = decode_blob(bytes.subspan(pos), consumed);
        pos += consumed;
        ckpt.entries.emplace_back(std::move(name), std::move(blob));
    }
    if (pos != bytes.size()) fail(ErrorKind::Format, "trailing bytes after checkpoint entries");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

// Mixed weights

namespace {

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    le::put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
    le::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    const std::uint8_t* take(std::size_t n) {
        if (b_.size() - pos_ < n) fail(ErrorKind::Truncated, "mixed weight blob truncated");
        const std::uint8_t* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint8_t u8() { return *take(1); }
    std::uint16_t u16() { return le::get_u16(take(2)); }
    std::uint32_t u32() { return le::get_u32(take(4)); }
    float f32() { return le::get_f32(take(4)); }
    double f64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return std::bit_cast<double>(lo | (hi << 32));
    }
    bool done() const noexcept { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_mixed_weight(const MixedWeight& mw) {
    const QuantizedTensor& qt = mw.normal;
    const QuantParams& qp = qt.params;
    require(qp.granularity == Granularity::PerChannel && qp.axis == 0, ErrorKind::InvalidArgument,
            "mixed weight normal part must be per output channel");
    require(!qt.dims.empty() && qt.dims.size() <= 8, ErrorKind::InvalidArgument, "mixed weight: bad dims");
    const std::uint8_t code_bytes = qp.bits <= 8 ? 1 : 2;
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>(qp.bits));
    out.push_back(code_bytes);
    out.push_back(static_cast<std::uint8_t>(qt.dims.size()));
    out.push_back(0);
    for (auto d : qt.dims) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (auto c : qt.codes) {
        if (code_bytes == 1) {
            out.push_back(static_cast<std::uint8_t>(c));
        } else {
            le::put_u16(out, c);
        }
    }
    le::put_u32(out, static_cast<std::uint32_t>(qp.channels()));
    for (std::size_t c = 0; c < qp.channels(); ++c) {
        le::put_f32(out, qp.lower[c]);
        le::put_f32(out, qp.upper[c]);
        le::put_u32(out, static_cast<std::uint32_t>(qp.zero_point[c]));
    }
    put_f64(out, mw.beta);
    put_f64(out, mw.t_low);
    put_f64(out, mw.t_high);
    le::put_u32(out, static_cast<std::uint32_t>(mw.outlier_index.size()));
    for (std::size_t k = 0; k < mw.outlier_index.size(); ++k) {
        le::put_u32(out, mw.outlier_index[k]);
        le::put_u16(out, mw.outlier_value[k]);
    }
    return out;
}

MixedWeight decode_mixed_weight(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    MixedWeight mw;
    const int bits = r.u8();
    const std::uint8_t code_bytes = r.u8();
    const std::size_t ndim = r.u8();
    r.u8();
    if (code_bytes != (bits <= 8 ? 1 : 2)) fail(ErrorKind::Format, "mixed weight: code width does not match bits");
    if (ndim < 1 || ndim > 8) fail(ErrorKind::Format, "mixed weight: bad ndim");
    std::size_t n = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0) fail(ErrorKind::Format, "mixed weight: zero extent");
        mw.normal.dims.push_back(d);
        n *= d;
        if (n > (std::size_t{1} << 32)) fail(ErrorKind::DimsOverflow, "mixed weight: too many elements");
    }
    mw.normal.codes.resize(n);
    for (std::size_t i = 0; i < n; ++i) mw.normal.codes[i] = code_bytes == 1 ? r.u8() : r.u16();
    const std::uint32_t channels = r.u32();
    if (channels != mw.normal.dims[0]) fail(ErrorKind::Format, "mixed weight: channel count mismatch");
    std::vector<float> lo(channels), hi(channels);
    std::vector<std::int32_t> zp(channels);
    for (std::uint32_t c = 0; c < channels; ++c) {
        lo[c] = r.f32();
        hi[c] = r.f32();
        zp[c] = static_cast<std::int32_t>(r.u32());
    }
    mw.normal.params = compute_qparams_per_channel(lo, hi, bits, 0);
    if (mw.normal.params.zero_point != zp) fail(ErrorKind::Format, "mixed weight: zero points inconsistent with bounds");
    const auto qmax = static_cast<std::uint32_t>(mw.normal.params.qmax());
    for (auto c : mw.normal.codes)
        if (c > qmax) fail(ErrorKind::Format, "mixed weight: code out of range");
    mw.beta = r.f64();
    mw.t_low = r.f64();
    mw.t_high = r.f64();
    const std::uint32_t count = r.u32();
    if (count > n) fail(ErrorKind::Format, "mixed weight: more outliers than weights");
    for (std::uint32_t k = 0; k < count; ++k) {
        mw.outlier_index.push_back(r.u32());
        mw.outlier_value.push_back(r.u16());
    }
    if (!r.done()) fail(ErrorKind::Format, "mixed weight: trailing bytes");
    return mw;
}

// Model <-> checkpoint

namespace {

std::string key(std::size_t i, const char* field) { return "conv" + std::to_string(i) + "." + field; }

std::vector<std::uint32_t> dims1(std::size_t n) { return {static_cast<std::uint32_t>(n)}; }

}  // namespace

Checkpoint to_checkpoint(const ModelGraph& model) {
    Checkpoint ckpt;
    const auto& layers = model.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const ConvLayer& l = layers[i];
        ckpt.put(key(i, "weight"), TensorBlob::from_tensor(l.weight));
        ckpt.put(key(i, "bias"), TensorBlob::from_tensor(Tensor({static_cast<std::int64_t>(l.bias.size())}, l.bias)));
        const std::int32_t dil = l.dilation;
        ckpt.put(key(i, "dilation"), TensorBlob::from_i32(dims1(1), std::span(&dil, 1)));
        if (!model.quantized()) continue;
        const LayerQuant& q = model.quant()[i];
        const std::int32_t bits[2] = {q.weight.normal.params.bits, q.bits_a};
        ckpt.put(key(i, "bits"), TensorBlob::from_i32(dims1(2), bits));
        ckpt.put(key(i, "act_bounds"), TensorBlob::from_tensor(Tensor({2}, {q.act_bounds.lower, q.act_bounds.upper})));
        if (!q.smoothing.empty())
            ckpt.put(key(i, "smoothing"),
                     TensorBlob::from_tensor(Tensor({static_cast<std::int64_t>(q.smoothing.size())}, q.smoothing)));
        const auto packed = encode_mixed_weight(q.weight);
        ckpt.put(key(i, "wmixed"), TensorBlob::from_u8(dims1(packed.size()), packed));
    }
    return ckpt;
}

ModelGraph model_from_checkpoint(const Checkpoint& ckpt) {
    ModelGraph model = ModelGraph::zeros();
    auto& layers = model.layers();
    std::vector<LayerQuant> quant;
    bool any_quant = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        ConvLayer& l = layers[i];
        Tensor w = ckpt.at(key(i, "weight")).to_tensor();
        if (!w.same_shape(l.weight)) fail(ErrorKind::ShapeMismatch, "checkpoint weight shape for " + key(i, "weight"));
        l.weight = std::move(w);
        Tensor b = ckpt.at(key(i, "bias")).to_tensor();
        if (b.numel() != l.bias.size()) fail(ErrorKind::ShapeMismatch, "checkpoint bias length for " + key(i, "bias"));
        l.bias = b.storage();
        const auto dil = ckpt.at(key(i, "dilation")).to_i32();
        if (dil.size() != 1 || dil[0] != l.dilation) fail(ErrorKind::Format, "checkpoint dilation mismatch");

        const TensorBlob* bits = ckpt.find(key(i, "bits"));
        if (!bits) continue;
        any_quant = true;
        const auto bw = bits->to_i32();
        if (bw.size() != 2) fail(ErrorKind::Format, "checkpoint bits entry must hold two values");
        LayerQuant q;
        q.bits_a = bw[1];
        const Tensor bounds = ckpt.at(key(i, "act_bounds")).to_tensor();
        if (bounds.numel() != 2) fail(ErrorKind::Format, "checkpoint act_bounds must hold two values");
        q.set_act_bounds({bounds[0], bounds[1]});
        if (const TensorBlob* s = ckpt.find(key(i, "smoothing"))) q.smoothing = s->to_tensor().storage();
        q.weight = decode_mixed_weight(ckpt.at(key(i, "wmixed")).to_u8());
        if (q.weight.normal.params.bits != bw[0]) fail(ErrorKind::Format, "checkpoint weight bit width mismatch");
        q.effective_weight = mixed_weight_apply(q.weight);
        quant.push_back(std::move(q));
    }
    if (any_quant) {
        if (quant.size() != layers.size()) fail(ErrorKind::Format, "checkpoint quantizes only some layers");
        model.set_quant(std::move(quant));
    }
    return model;
}

}  // namespace qdm
