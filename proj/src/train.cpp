#include "gcap/train.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "gcap/errors.hpp"
#include "gcap/loss.hpp"
#include "gcap/rng.hpp"

namespace gcap {

void TrainConfig::validate() const {
    if (minibatch == 0) {
        throw ArgumentError("train: minibatch must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ArgumentError("train: learning rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ArgumentError("train: momentum must lie in [0, 1)");
    }
}

TrainResult sgd_train(const Network& init, const LabeledDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) {
        throw ArgumentError("sgd_train: empty dataset");
    }
    if (data.dim() != init.input_dim()) {
        throw ShapeError("sgd_train: dataset inputs do not match the network input width");
    }

    TrainResult result{init, 0, mean_loss(init, data, LossKind::cross_entropy), false};
    if (cfg.max_epochs == 0) {
        result.reached_threshold = result.final_loss < cfg.loss_threshold;
        return result;
    }

    std::vector<Matrix> weights = init.layers();
    std::vector<Matrix> velocity = init.zeros_like();
    Matrix batch_inputs;
    std::vector<std::size_t> batch_labels;
    const std::size_t m = data.size();

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng::Stream stream(cfg.seed, rng::Purpose::shuffle, epoch);
        const auto order = rng::permutation(m, stream);
        for (std::size_t start = 0; start < m; start += cfg.minibatch) {
            const std::size_t len = std::min(cfg.minibatch, m - start);
            gather_batch(data, std::span(order).subspan(start, len), batch_inputs, batch_labels);
            const LossGradient g = gradient(std::span<const Matrix>(weights), batch_inputs, batch_labels);
            if (!std::isfinite(g.loss)) {
                throw DivergenceError(epoch);
            }
            for (std::size_t i = 0; i < weights.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + g.grads[i];
                weights[i] -= cfg.learning_rate * velocity[i];
            }
        }
        for (const Matrix& w : weights) {
            if (!w.allFinite()) {
                throw DivergenceError(epoch);
            }
        }
        result.net = Network(weights);
        result.epochs = epoch + 1;
        result.final_loss = mean_loss(result.net, data, LossKind::cross_entropy);
        if (!std::isfinite(result.final_loss)) {
            throw DivergenceError(epoch);
        }
        if (result.final_loss < cfg.loss_threshold) {
            result.reached_threshold = true;
            break;
        }
    }
    return result;
}

}  // namespace gcap
