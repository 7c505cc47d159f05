#pragma once

#include <cstddef>
#include <cstdint>

#include "gcap/dataset.hpp"
#include "gcap/network.hpp"

namespace gcap {

/// Minibatch SGD with heavy-ball momentum on the mean cross-entropy.
struct TrainConfig {
    std::size_t minibatch = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double loss_threshold = 1e-4;
    std::size_t max_epochs = 2000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    Network net;
    std::size_t epochs = 0;
    double final_loss = 0.0;
    bool reached_threshold = false;
};

/// Trains until the full-data mean cross-entropy drops below the threshold
/// or the epoch cap is hit. Each epoch visits a fresh permutation drawn from
/// the (seed, epoch) stream. Throws DivergenceError on a non-finite loss.
TrainResult sgd_train(const Network& init, const LabeledDataset& data, const TrainConfig& cfg);

}  // namespace gcap
