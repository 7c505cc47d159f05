#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "gcap/dataset.hpp"
#include "gcap/network.hpp"

namespace gcap {

/// Cross-entropy is the training loss. Squared error against the one-hot
/// target exists for closed-form checks; zero-one is evaluation only.
enum class LossKind { cross_entropy, squared, zero_one };

LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(LossKind kind);

/// -log softmax(logits)[label], computed with max subtraction.
double cross_entropy(const Vector& logits, std::size_t label);

/// sum_k (logits_k - [k == label])^2
double squared_error(const Vector& logits, std::size_t label);

/// 1 when the true score does not strictly beat every other score.
double zero_one(const Vector& logits, std::size_t label);

double sample_loss(LossKind kind, const Vector& logits, std::size_t label);

/// Mean loss over the columns of a logit matrix.
double mean_loss(LossKind kind, const Matrix& logits, std::span<const std::size_t> labels);

/// Mean loss of the network over a whole dataset (evaluated in chunks).
double mean_loss(const Network& net, const LabeledDataset& data, LossKind kind);

inline double error_rate(const Network& net, const LabeledDataset& data) {
    return mean_loss(net, data, LossKind::zero_one);
}

struct LossGradient {
    double loss = 0.0;
    LayerTensors grads;
};

/// Mean loss over the batch columns and its gradient with respect to every
/// weight. The ReLU subgradient at a zero pre-activation is 0.
LossGradient gradient(std::span<const Matrix> layers, const Matrix& inputs, std::span<const std::size_t> labels,
                      LossKind kind = LossKind::cross_entropy);

LossGradient gradient(const Network& net, const Matrix& inputs, std::span<const std::size_t> labels,
                      LossKind kind = LossKind::cross_entropy);

LossGradient gradient(const Network& net, const LabeledDataset& batch, LossKind kind = LossKind::cross_entropy);

/// Columns of `data.inputs` and the matching labels for the given indices.
void gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices, Matrix& inputs,
                  std::vector<std::size_t>& labels);

}  // namespace gcap
