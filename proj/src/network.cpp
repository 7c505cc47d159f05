#include "gcap/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "gcap/errors.hpp"
#include "gcap/rng.hpp"

namespace gcap {

namespace {

void check_dims(std::span<const std::size_t> dims) {
    if (dims.size() < 2) {
        throw ShapeError("network needs at least an input and an output width");
    }
    for (std::size_t h : dims) {
        if (h == 0) {
            throw ShapeError("network widths must be positive");
        }
    }
}

Vector relu_mask(const Vector& z) {
    return (z.array() > 0.0).cast<double>().matrix();
}

}  // namespace

Network::Network(std::vector<Matrix> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw ShapeError("network must have at least one layer");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Matrix& w = layers_[i];
        if (w.rows() == 0 || w.cols() == 0) {
            throw ShapeError("layer " + std::to_string(i + 1) + " is empty");
        }
        if (i > 0 && w.cols() != layers_[i - 1].rows()) {
            throw ShapeError("layer " + std::to_string(i + 1) + " has " + std::to_string(w.cols()) +
                             " columns but layer " + std::to_string(i) + " has " +
                             std::to_string(layers_[i - 1].rows()) + " rows");
        }
        if (!w.allFinite()) {
            throw ArgumentError("layer " + std::to_string(i + 1) + " has non-finite entries");
        }
    }
}

Network Network::zeros(std::span<const std::size_t> dims) {
    check_dims(dims);
    std::vector<Matrix> layers;
    for (std::size_t i = 1; i < dims.size(); ++i) {
        layers.push_back(Matrix::Zero(static_cast<Eigen::Index>(dims[i]), static_cast<Eigen::Index>(dims[i - 1])));
    }
    return Network(std::move(layers));
}

Network Network::he_init(std::span<const std::size_t> dims, std::uint64_t seed) {
    check_dims(dims);
    std::vector<Matrix> layers;
    for (std::size_t i = 1; i < dims.size(); ++i) {
        rng::Stream stream(seed, rng::Purpose::init, i);
        const double sd = std::sqrt(2.0 / static_cast<double>(dims[i - 1]));
        Matrix w(static_cast<Eigen::Index>(dims[i]), static_cast<Eigen::Index>(dims[i - 1]));
        // Row-major fill so the draw order matches the file layout.
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                w(r, c) = sd * stream.normal();
            }
        }
        layers.push_back(std::move(w));
    }
    return Network(std::move(layers));
}

std::size_t Network::width(std::size_t i) const {
    if (i > depth()) {
        throw ArgumentError("width index " + std::to_string(i) + " exceeds depth " + std::to_string(depth()));
    }
    return i == 0 ? static_cast<std::size_t>(layers_.front().cols())
                  : static_cast<std::size_t>(layers_[i - 1].rows());
}

std::vector<std::size_t> Network::dims() const {
    std::vector<std::size_t> d;
    d.reserve(depth() + 1);
    for (std::size_t i = 0; i <= depth(); ++i) {
        d.push_back(width(i));
    }
    return d;
}

std::size_t Network::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const Matrix& w : layers_) {
        n += static_cast<std::size_t>(w.size());
    }
    return n;
}

Network Network::scaled(double c) const {
    std::vector<Matrix> out;
    out.reserve(layers_.size());
    for (const Matrix& w : layers_) {
        out.push_back(c * w);
    }
    return Network(std::move(out));
}

Network Network::perturbed(const LayerTensors& nu) const {
    if (nu.size() != layers_.size()) {
        throw ShapeError("perturbation has " + std::to_string(nu.size()) + " layers, network has " +
                         std::to_string(layers_.size()));
    }
    std::vector<Matrix> out;
    out.reserve(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (nu[i].rows() != layers_[i].rows() || nu[i].cols() != layers_[i].cols()) {
            throw ShapeError("perturbation shape mismatch in layer " + std::to_string(i + 1));
        }
        out.push_back(layers_[i] + nu[i]);
    }
    return Network(std::move(out));
}

Network Network::node_rescaled(std::size_t hidden, std::size_t unit, double c) const {
    if (hidden == 0 || hidden >= depth()) {
        throw ArgumentError("node_rescaled: hidden layer index must be in [1, depth)");
    }
    if (unit >= width(hidden)) {
        throw ArgumentError("node_rescaled: unit index out of range");
    }
    if (!(c > 0.0)) {
        throw ArgumentError("node_rescaled: factor must be positive");
    }
    std::vector<Matrix> out = layers_;
    out[hidden - 1].row(static_cast<Eigen::Index>(unit)) *= c;
    out[hidden].col(static_cast<Eigen::Index>(unit)) /= c;
    return Network(std::move(out));
}

LayerTensors Network::zeros_like() const {
    LayerTensors out;
    out.reserve(layers_.size());
    for (const Matrix& w : layers_) {
        out.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    return out;
}

bool Network::operator==(const Network& other) const {
    if (layers_.size() != other.layers_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Matrix& a = layers_[i];
        const Matrix& b = other.layers_[i];
        if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) {
            return false;
        }
    }
    return true;
}

ForwardResult forward(const Network& net, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
        throw ShapeError("input has length " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(net.input_dim()));
    }
    ForwardResult out;
    out.trace.input = x;
    Vector a = x;
    const std::size_t d = net.depth();
    for (std::size_t i = 0; i + 1 < d; ++i) {
        Vector z = net.layer(i) * a;
        Vector mask = relu_mask(z);
        a = z.cwiseProduct(mask);
        out.trace.pre_activations.push_back(std::move(z));
        out.trace.masks.push_back(std::move(mask));
    }
    out.logits = net.layer(d - 1) * a;
    return out;
}

Matrix forward_batch(const Network& net, const Matrix& inputs) {
    if (static_cast<std::size_t>(inputs.rows()) != net.input_dim()) {
        throw ShapeError("batch rows " + std::to_string(inputs.rows()) + " != network input width " +
                         std::to_string(net.input_dim()));
    }
    Matrix a = inputs;
    const std::size_t d = net.depth();
    for (std::size_t i = 0; i + 1 < d; ++i) {
        a = (net.layer(i) * a).cwiseMax(0.0);
    }
    return net.layer(d - 1) * a;
}

Matrix partial_product(const Network& net, const ActivationTrace& trace, std::size_t a, std::size_t b) {
    const std::size_t d = net.depth();
    if (a > b) {
        throw ArgumentError("partial_product: a = " + std::to_string(a) + " exceeds b = " + std::to_string(b));
    }
    if (b > d) {
        throw ArgumentError("partial_product: b = " + std::to_string(b) + " exceeds depth " + std::to_string(d));
    }
    if (trace.hidden_layers() + 1 != d) {
        throw ShapeError("partial_product: trace does not belong to this network");
    }
    auto apply_mask = [&](std::size_t i, Matrix& m) {
        if (i >= 1 && i < d) {
            m = trace.masks[i - 1].asDiagonal() * m;
        }
    };
    Matrix m;
    std::size_t next;
    if (a == 0) {
        if (static_cast<std::size_t>(trace.input.size()) != net.input_dim()) {
            throw ShapeError("partial_product: trace input has the wrong length");
        }
        m = trace.input;
        next = 1;
    } else {
        m = net.layer(a - 1);
        apply_mask(a, m);
        next = a + 1;
    }
    for (std::size_t i = next; i <= b; ++i) {
        m = net.layer(i - 1) * m;
        apply_mask(i, m);
    }
    return m;
}

namespace {

constexpr char kMagic[4] = {'G', 'C', 'A', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) {
        out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t offset() const noexcept { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated model file while reading ") + what, pos_);
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(bytes_[pos_ + k]) << (8 * k);
        }
        pos_ += 4;
        return v;
    }

    double f64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) {
            v |= static_cast<std::uint64_t>(bytes_[pos_ + k]) << (8 * k);
        }
        pos_ += 8;
        return std::bit_cast<double>(v);
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_network(const Network& net) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(net.depth()));
    for (std::size_t h : net.dims()) {
        put_u32(out, static_cast<std::uint32_t>(h));
    }
    for (const Matrix& w : net.layers()) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                put_f64(out, w(r, c));
            }
        }
    }
    return out;
}

Network decode_network(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    const auto magic = in.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw FormatError("bad model magic (expected \"GCAP\")", 0);
    }
    const std::uint64_t version_at = in.offset();
    const std::uint32_t version = in.u32("version");
    if (version != kVersion) {
        throw FormatError("unsupported model version " + std::to_string(version), version_at);
    }
    const std::uint32_t depth = in.u32("depth");
    if (depth == 0) {
        throw FormatError("model depth must be at least 1", in.offset() - 4);
    }
    std::vector<std::size_t> dims;
    for (std::uint32_t i = 0; i <= depth; ++i) {
        const std::uint32_t h = in.u32("widths");
        if (h == 0) {
            throw FormatError("zero layer width", in.offset() - 4);
        }
        dims.push_back(h);
    }
    std::vector<Matrix> layers;
    for (std::uint32_t i = 1; i <= depth; ++i) {
        Matrix w(static_cast<Eigen::Index>(dims[i]), static_cast<Eigen::Index>(dims[i - 1]));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                w(r, c) = in.f64("weights");
            }
        }
        layers.push_back(std::move(w));
    }
    if (!in.done()) {
        throw FormatError("trailing bytes after model weights", in.offset());
    }
    return Network(std::move(layers));
}

void save_network(const Network& net, const std::filesystem::path& path) {
    const auto bytes = encode_network(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open model file " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_network(bytes);
}

}  // namespace gcap
