#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gcap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Per-layer tensors shaped like a network's weights (gradients, perturbations).
using LayerTensors = std::vector<Matrix>;

/// Bias-free feedforward ReLU network f(x) = W_d relu(W_{d-1} ... relu(W_1 x)).
///
/// layers()[i] holds W_{i+1} with shape h_{i+1} x h_i; row r is the incoming
/// weight vector of unit r. Widths are indexed the usual way: width(0) is the
/// input dimension and width(depth()) the number of outputs.
class Network {
public:
    explicit Network(std::vector<Matrix> layers);

    /// All-zero weights for the given widths [h_0, ..., h_d].
    static Network zeros(std::span<const std::size_t> dims);

    /// He initialization: entries of W_i drawn from N(0, 2 / h_{i-1}).
    static Network he_init(std::span<const std::size_t> dims, std::uint64_t seed);

    std::size_t depth() const noexcept { return layers_.size(); }
    std::size_t width(std::size_t i) const;
    std::vector<std::size_t> dims() const;
    std::size_t input_dim() const { return width(0); }
    std::size_t output_dim() const { return width(depth()); }
    std::size_t parameter_count() const noexcept;

    const std::vector<Matrix>& layers() const noexcept { return layers_; }
    const Matrix& layer(std::size_t i) const { return layers_.at(i); }

    /// Every weight multiplied by c.
    Network scaled(double c) const;

    /// w + nu; nu must match the layer shapes.
    Network perturbed(const LayerTensors& nu) const;

    /// Multiplies incoming weights of hidden unit `unit` in hidden layer
    /// `hidden` (1-based, < depth) by c and its outgoing weights by 1/c.
    Network node_rescaled(std::size_t hidden, std::size_t unit, double c) const;

    /// Zero tensors with the layer shapes.
    LayerTensors zeros_like() const;

    bool operator==(const Network& other) const;

private:
    std::vector<Matrix> layers_;
};

/// Activation record for one input: for each hidden layer i in [1, d-1] the
/// pre-activation W_i a_{i-1} and its 0/1 mask (1 exactly when the
/// pre-activation is strictly positive).
struct ActivationTrace {
    Vector input;
    std::vector<Vector> pre_activations;
    std::vector<Vector> masks;

    std::size_t hidden_layers() const noexcept { return masks.size(); }
};

struct ForwardResult {
    Vector logits;
    ActivationTrace trace;
};

ForwardResult forward(const Network& net, const Vector& x);

/// Logits for every column of `inputs` (h_0 x B); no trace is kept.
Matrix forward_batch(const Network& net, const Matrix& inputs);

/// D_b W_b ... D_a W_a under the trace's activation pattern, with layers
/// numbered 1..d, D_d = I, and index 0 standing for the input column x
/// (W_0 = x, D_0 = I). The result has h_b rows and h_{a-1} columns (one
/// column when a = 0).
Matrix partial_product(const Network& net, const ActivationTrace& trace, std::size_t a, std::size_t b);

// Model persistence: "GCAP", u32 version = 1, u32 depth, depth + 1 u32
// widths, then each layer row-major as f64. All little-endian.
std::vector<std::uint8_t> encode_network(const Network& net);
Network decode_network(std::span<const std::uint8_t> bytes);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace gcap
