#include "pnr/datastore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "pnr/error.hpp"

namespace pnr {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

LabeledDataset gen_synthetic(std::uint32_t num_classes, std::size_t input_dim,
                             std::size_t samples_per_class, double radius, double sigma,
                             std::uint64_t seed) {
    if (num_classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
    if (input_dim < 2) throw Error(ErrorCode::InvalidArgument, "need input_dim >= 2");
    if (samples_per_class < 1) throw Error(ErrorCode::InvalidArgument, "need samples_per_class >= 1");
    if (!(radius > 0.0) || !std::isfinite(radius))
        throw Error(ErrorCode::InvalidArgument, "radius must be > 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        throw Error(ErrorCode::InvalidArgument, "sigma must be >= 0");

    constexpr std::size_t kMaxTries = 10000;
    const double min_sep = radius / std::sqrt(static_cast<double>(num_classes));
    Rng rng(seed);
    Matrix means(num_classes, input_dim);
    std::size_t tries = 0;
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        for (;;) {
            if (tries++ >= kMaxTries) {
                throw Error(ErrorCode::RejectionExhausted,
                            "could not place " + std::to_string(num_classes) +
                                " separated means in " + std::to_string(input_dim) + " dims");
            }
            auto m = means.row(c);
            for (double& v : m) v = rng.gaussian();
            const double norm = std::sqrt(dot(m, m));
            if (!(norm > kNormEpsilon)) continue;
            for (double& v : m) v *= radius / norm;
            bool separated = true;
            for (std::uint32_t p = 0; p < c && separated; ++p)
                separated = std::sqrt(squared_distance(m, means.row(p))) >= min_sep;
            if (separated) break;
        }
    }

    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.x = Matrix(static_cast<std::size_t>(num_classes) * samples_per_class, input_dim);
    ds.y.reserve(ds.x.rows());
    std::size_t r = 0;
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < samples_per_class; ++s, ++r) {
            auto row = ds.x.row(r);
            const auto m = means.row(c);
            for (std::size_t k = 0; k < input_dim; ++k) row[k] = m[k] + sigma * rng.gaussian();
            ds.y.push_back(c);
        }
    }
    return ds;
}

namespace {

class Writer {
public:
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
    void u32s(std::span<const std::uint32_t> v) { raw(v.data(), v.size_bytes()); }
    std::size_t size() const noexcept { return out_.size(); }
    std::vector<std::uint8_t>& buffer() noexcept { return out_; }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void magic(const std::array<std::uint8_t, 8>& expected) {
        need(expected.size());
        if (std::memcmp(bytes_.data(), expected.data(), expected.size()) != 0)
            throw Error(ErrorCode::BadMagic, "unrecognized file signature");
        pos_ += expected.size();
    }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    void f64s(std::span<double> out) { copy(out.data(), out.size_bytes()); }
    void u32s(std::span<std::uint32_t> out) { copy(out.data(), out.size_bytes()); }
    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    std::span<const std::uint8_t> slice(std::size_t from, std::size_t to) const {
        return bytes_.subspan(from, to - from);
    }

private:
    template <typename T>
    T scalar() {
        T v;
        copy(&v, sizeof v);
        return v;
    }
    void copy(void* dst, std::size_t n) {
        need(n);
        if (n > 0) std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw Error(ErrorCode::TruncatedFile, "file ends inside the header or payload");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t to_u32(std::size_t v, const char* what) {
    if (v > UINT32_MAX) throw Error(ErrorCode::InvalidArgument, std::string(what) + " exceeds 2^32-1");
    return static_cast<std::uint32_t>(v);
}

void check_version(Reader& r) {
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw Error(ErrorCode::VersionMismatch, "format version " + std::to_string(version) +
                                                    ", expected " +
                                                    std::to_string(kFormatVersion));
    }
}

// The payload must be followed by exactly the 8-byte checksum.
void check_length(const Reader& r, std::uint64_t payload_bytes) {
    if (static_cast<std::uint64_t>(r.remaining()) != payload_bytes + 8) {
        throw Error(ErrorCode::TruncatedFile,
                    "header announces " + std::to_string(payload_bytes) +
                        " payload bytes but the file holds " + std::to_string(r.remaining()) +
                        " after the header");
    }
}

void check_checksum(Reader& r, std::size_t payload_start) {
    const std::uint64_t computed = fnv1a64(r.slice(payload_start, r.pos()));
    if (r.u64() != computed) throw Error(ErrorCode::ChecksumFail, "payload checksum mismatch");
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds) {
    validate(ds);
    Writer w;
    w.bytes(kDatasetMagic);
    w.u32(kFormatVersion);
    w.u32(to_u32(ds.x.rows(), "rows"));
    w.u32(to_u32(ds.x.cols(), "cols"));
    w.u32(ds.num_classes);
    w.u32(ds.domain_id ? 1 : 0);
    w.u32(ds.domain_id.value_or(0));
    const std::size_t start = w.size();
    w.f64s(ds.x.data());
    w.u32s(ds.y);
    const std::uint64_t sum = fnv1a64(std::span(w.buffer()).subspan(start));
    w.u64(sum);
    return std::move(w.buffer());
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.magic(kDatasetMagic);
    check_version(r);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::uint32_t num_classes = r.u32();
    const std::uint32_t has_domain = r.u32();
    const std::uint32_t domain_id = r.u32();
    const std::uint64_t cells = static_cast<std::uint64_t>(rows) * cols;
    check_length(r, cells * 8 + static_cast<std::uint64_t>(rows) * 4);

    const std::size_t start = r.pos();
    std::vector<double> x(static_cast<std::size_t>(cells));
    r.f64s(x);
    LabeledDataset ds;
    ds.y.resize(rows);
    r.u32s(ds.y);
    check_checksum(r, start);
    if (has_domain > 1) throw Error(ErrorCode::InvalidArgument, "bad domain flag");
    ds.x = Matrix(rows, cols, std::move(x));
    ds.num_classes = num_classes;
    if (has_domain) ds.domain_id = domain_id;
    validate(ds);
    return ds;
}

std::vector<std::uint8_t> encode_checkpoint(const EncoderStack& stack) {
    std::vector<const MlpParams*> parts{&stack.encoder, &stack.projector, &stack.predictor};
    if (stack.ssl_predictor) parts.push_back(&*stack.ssl_predictor);
    Writer w;
    w.bytes(kCheckpointMagic);
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(parts.size()));
    for (const MlpParams* mlp : parts) {
        w.u32(to_u32(mlp->layers.size(), "layer count"));
        for (const DenseLayer& layer : mlp->layers) {
            w.u32(to_u32(layer.out_dim(), "layer width"));
            w.u32(to_u32(layer.in_dim(), "layer width"));
        }
    }
    const std::size_t start = w.size();
    for (const MlpParams* mlp : parts) {
        for (const DenseLayer& layer : mlp->layers) {
            w.f64s(layer.weight.data());
            w.f64s(layer.bias);
        }
    }
    const std::uint64_t sum = fnv1a64(std::span(w.buffer()).subspan(start));
    w.u64(sum);
    return std::move(w.buffer());
}

EncoderStack decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.magic(kCheckpointMagic);
    check_version(r);
    const std::uint32_t part_count = r.u32();
    if (part_count != 3 && part_count != 4)
        throw Error(ErrorCode::BadDims, "checkpoint must hold 3 or 4 networks");

    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> shapes(part_count);
    std::uint64_t payload = 0;
    for (auto& shape : shapes) {
        const std::uint32_t layers = r.u32();
        if (layers == 0) throw Error(ErrorCode::BadDims, "network with no layers");
        for (std::uint32_t k = 0; k < layers; ++k) {
            const std::uint32_t out = r.u32();
            const std::uint32_t in = r.u32();
            if (out == 0 || in == 0) throw Error(ErrorCode::BadDims, "zero-width layer");
            if (!shape.empty() && shape.back().first != in)
                throw Error(ErrorCode::BadDims, "consecutive layer widths do not chain");
            shape.emplace_back(out, in);
            payload += (static_cast<std::uint64_t>(out) * in + out) * 8;
        }
    }
    check_length(r, payload);

    const std::size_t start = r.pos();
    std::vector<MlpParams> parts(part_count);
    for (std::uint32_t p = 0; p < part_count; ++p) {
        for (const auto& [out, in] : shapes[p]) {
            std::vector<double> w(static_cast<std::size_t>(out) * in);
            r.f64s(w);
            DenseLayer layer;
            layer.weight = Matrix(out, in, std::move(w));
            layer.bias.resize(out);
            r.f64s(layer.bias);
            parts[p].layers.push_back(std::move(layer));
        }
    }
    check_checksum(r, start);

    EncoderStack stack;
    stack.encoder = std::move(parts[0]);
    stack.projector = std::move(parts[1]);
    stack.predictor = std::move(parts[2]);
    if (part_count == 4) stack.ssl_predictor = std::move(parts[3]);
    return stack;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot create " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw Error(ErrorCode::IoError, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(ErrorCode::IoError, "cannot move file into place: " + path.string());
    }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
    write_file_atomic(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
    return decode_dataset(read_file(path));
}

void save_checkpoint(const std::filesystem::path& path, const EncoderStack& stack) {
    write_file_atomic(path, encode_checkpoint(stack));
}

EncoderStack load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

}  // namespace pnr
