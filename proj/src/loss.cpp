#include "gcap/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gcap/errors.hpp"

namespace gcap {

namespace {

void check_label(const Vector& logits, std::size_t label) {
    if (label >= static_cast<std::size_t>(logits.size())) {
        throw ArgumentError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                            " outputs");
    }
}

// Columns per chunk when evaluating over a whole dataset.
constexpr Eigen::Index kEvalChunk = 1024;

}  // namespace

LossKind parse_loss_kind(std::string_view name) {
    if (name == "cross_entropy" || name == "ce") {
        return LossKind::cross_entropy;
    }
    if (name == "squared") {
        return LossKind::squared;
    }
    if (name == "zero_one" || name == "error") {
        return LossKind::zero_one;
    }
    throw ArgumentError("unknown loss '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::cross_entropy:
            return "cross_entropy";
        case LossKind::squared:
            return "squared";
        case LossKind::zero_one:
            return "zero_one";
    }
    return "unknown";
}

double cross_entropy(const Vector& logits, std::size_t label) {
    check_label(logits, label);
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    return lse - logits(static_cast<Eigen::Index>(label));
}

double squared_error(const Vector& logits, std::size_t label) {
    check_label(logits, label);
    Vector r = logits;
    r(static_cast<Eigen::Index>(label)) -= 1.0;
    return r.squaredNorm();
}

double zero_one(const Vector& logits, std::size_t label) {
    check_label(logits, label);
    const auto y = static_cast<Eigen::Index>(label);
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        if (k != y && logits(k) >= logits(y)) {
            return 1.0;
        }
    }
    return 0.0;
}

double sample_loss(LossKind kind, const Vector& logits, std::size_t label) {
    switch (kind) {
        case LossKind::cross_entropy:
            return cross_entropy(logits, label);
        case LossKind::squared:
            return squared_error(logits, label);
        case LossKind::zero_one:
            return zero_one(logits, label);
    }
    throw ArgumentError("unknown loss kind");
}

double mean_loss(LossKind kind, const Matrix& logits, std::span<const std::size_t> labels) {
    if (static_cast<std::size_t>(logits.cols()) != labels.size()) {
        throw ShapeError("mean_loss: logits and labels disagree in count");
    }
    if (labels.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        total += sample_loss(kind, logits.col(j), labels[static_cast<std::size_t>(j)]);
    }
    return total / static_cast<double>(labels.size());
}

double mean_loss(const Network& net, const LabeledDataset& data, LossKind kind) {
    if (data.empty()) {
        return 0.0;
    }
    double total = 0.0;
    const auto m = static_cast<Eigen::Index>(data.size());
    for (Eigen::Index start = 0; start < m; start += kEvalChunk) {
        const Eigen::Index len = std::min(kEvalChunk, m - start);
        const Matrix logits = forward_batch(net, data.inputs.middleCols(start, len));
        for (Eigen::Index j = 0; j < len; ++j) {
            total += sample_loss(kind, logits.col(j), data.labels[static_cast<std::size_t>(start + j)]);
        }
    }
    return total / static_cast<double>(data.size());
}

LossGradient gradient(std::span<const Matrix> layers, const Matrix& inputs, std::span<const std::size_t> labels,
                      LossKind kind) {
    const std::size_t d = layers.size();
    const Eigen::Index batch = inputs.cols();
    if (d == 0) {
        throw ShapeError("gradient: empty network");
    }
    if (batch == 0 || static_cast<std::size_t>(batch) != labels.size()) {
        throw ArgumentError("gradient: batch must be nonempty with one label per column");
    }
    if (inputs.rows() != layers.front().cols()) {
        throw ShapeError("gradient: input width does not match the first layer");
    }
    if (kind == LossKind::zero_one) {
        throw ArgumentError("gradient: zero-one loss is not differentiable");
    }

    // activations[i] is the input to layer i (0-based); pre[i] its output before ReLU.
    std::vector<Matrix> activations;
    std::vector<Matrix> pre;
    activations.reserve(d);
    pre.reserve(d - 1);
    activations.push_back(inputs);
    for (std::size_t i = 0; i + 1 < d; ++i) {
        pre.push_back(layers[i] * activations.back());
        activations.push_back(pre.back().cwiseMax(0.0));
    }
    const Matrix logits = layers[d - 1] * activations.back();
    const Eigen::Index outputs = logits.rows();

    const double inv_b = 1.0 / static_cast<double>(batch);
    Matrix delta(outputs, batch);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < batch; ++j) {
        const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(j)]);
        if (y >= outputs) {
            throw ArgumentError("gradient: label out of range");
        }
        if (kind == LossKind::cross_entropy) {
            const double top = logits.col(j).maxCoeff();
            const Eigen::ArrayXd e = (logits.col(j).array() - top).exp();
            const double s = e.sum();
            loss += top + std::log(s) - logits(y, j);
            delta.col(j) = (e / s).matrix();
            delta(y, j) -= 1.0;
        } else {
            Vector r = logits.col(j);
            r(y) -= 1.0;
            loss += r.squaredNorm();
            delta.col(j) = 2.0 * r;
        }
    }
    delta *= inv_b;

    LossGradient out;
    out.loss = loss * inv_b;
    out.grads.resize(d);
    for (std::size_t i = d; i-- > 0;) {
        out.grads[i].noalias() = delta * activations[i].transpose();
        if (i > 0) {
            Matrix back = layers[i].transpose() * delta;
            delta = back.cwiseProduct((pre[i - 1].array() > 0.0).cast<double>().matrix());
        }
    }
    return out;
}

LossGradient gradient(const Network& net, const Matrix& inputs, std::span<const std::size_t> labels, LossKind kind) {
    return gradient(std::span<const Matrix>(net.layers()), inputs, labels, kind);
}

LossGradient gradient(const Network& net, const LabeledDataset& batch, LossKind kind) {
    return gradient(net, batch.inputs, batch.labels, kind);
}

void gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices, Matrix& inputs,
                  std::vector<std::size_t>& labels) {
    inputs.resize(data.inputs.rows(), static_cast<Eigen::Index>(indices.size()));
    labels.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        inputs.col(static_cast<Eigen::Index>(k)) = data.inputs.col(static_cast<Eigen::Index>(indices[k]));
        labels[k] = data.labels[indices[k]];
    }
}

}  // namespace gcap
