#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "posegraph/convnet.hpp"
#include "posegraph/parallel.hpp"
#include "posegraph/pose_types.hpp"
#include "posegraph/rng.hpp"

namespace posegraph {

struct TrainConfig {
    double learningRate = 1e-3;
    double momentumCoeff = 0.9;
    double rmsDecay = 0.99;
    double rmsEpsilon = 1e-8;
    double l2Coeff = 1e-4;
    double dropoutRate = 0.5;
    std::size_t batchSize = 64;
    std::size_t epochs = 20;
    std::uint64_t seed = 1;
    double validationFraction = 0.1;

    void validate() const
    {
        auto check = [](bool ok, const std::string& msg) {
            if (!ok)
                throw ConfigError("train config: " + msg);
        };
        check(learningRate >= 0.0 && std::isfinite(learningRate), "learning rate must be >= 0");
        check(momentumCoeff >= 0.0 && momentumCoeff < 1.0, "momentum must lie in [0,1)");
        check(rmsDecay > 0.0 && rmsDecay < 1.0, "RMS decay must lie in (0,1)");
        check(rmsEpsilon > 0.0, "RMS epsilon must be > 0");
        check(l2Coeff >= 0.0, "L2 coefficient must be >= 0");
        check(dropoutRate >= 0.0 && dropoutRate < 1.0, "dropout rate must lie in [0,1)");
        check(batchSize >= 1, "batch size must be >= 1");
        check(validationFraction >= 0.0 && validationFraction < 1.0, "validation fraction must lie in [0,1)");
    }
};

/// Velocity and RMS accumulators, shaped like the parameters.
struct OptimizerState {
    NetworkParams velocity;
    NetworkParams meanSquare;

    explicit OptimizerState(const Architecture& arch) : velocity(arch), meanSquare(arch) {}
};

/// One element-wise update: L2 is folded into the gradient, the gradient is
/// RMS-scaled, and the scaled gradient drives Nesterov momentum:
///   g  += l2 * theta
///   ms  = rho * ms + (1 - rho) * g^2
///   gh  = g / sqrt(ms + eps)
///   v   = mu * v - lr * gh
///   theta += mu * v - lr * gh
inline void sgd_update(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
                       std::span<double> meanSquare, const TrainConfig& cfg)
{
    require(theta.size() == grad.size() && theta.size() == velocity.size() && theta.size() == meanSquare.size(),
            "sgd_update: block sizes differ (", theta.size(), ", ", grad.size(), ", ", velocity.size(), ", ",
            meanSquare.size(), ")");
    const double mu = cfg.momentumCoeff, rho = cfg.rmsDecay, lr = cfg.learningRate;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i] + cfg.l2Coeff * theta[i];
        meanSquare[i] = rho * meanSquare[i] + (1.0 - rho) * g * g;
        const double scaled = g / std::sqrt(meanSquare[i] + cfg.rmsEpsilon);
        velocity[i] = mu * velocity[i] - lr * scaled;
        theta[i] += mu * velocity[i] - lr * scaled;
    }
}

inline void sgd_step(NetworkParams& params, const GradientSet& grads, OptimizerState& state, const TrainConfig& cfg)
{
    require(params.same_layout(grads) && params.same_layout(state.velocity) && params.same_layout(state.meanSquare),
            "sgd_step: parameter, gradient and optimizer state shapes differ");
    auto theta = params.blocks();
    const auto g = grads.blocks();
    auto v = state.velocity.blocks();
    auto ms = state.meanSquare.blocks();
    for (std::size_t b = 0; b < theta.size(); ++b)
        sgd_update(theta[b], g[b], v[b], ms[b], cfg);
}

struct EpochLog {
    std::size_t epoch = 0;
    double trainLoss = 0.0;
    double valLoss = 0.0;
    double valAccuracy = 0.0;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
    NetworkParams params;
    std::vector<EpochLog> log;
    std::size_t bestEpoch = 0; // 0: initialization was kept
};

/// Examples per gradient chunk. Chunks are fixed by batch position, not by
/// worker, so the reduction order never depends on the thread count.
inline constexpr std::size_t kGradientChunk = 8;

struct BatchGradient {
    GradientSet grads;
    double lossSum = 0.0;
};

/// Summed gradient and loss over `batch` (indices into `samples`).
inline BatchGradient batch_gradient(const NetworkParams& params, std::span<const PatchSample> samples,
                                    std::span<const std::size_t> batch, double dropoutRate,
                                    std::uint64_t dropoutSeed, std::size_t workers)
{
    const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
    std::vector<GradientSet> partial(chunks, GradientSet(params.arch));
    std::vector<double> partialLoss(chunks, 0.0);
    parallel_for(chunks, workers, [&](std::size_t c) {
        const std::size_t begin = c * kGradientChunk, end = std::min(batch.size(), begin + kGradientChunk);
        for (std::size_t i = begin; i < end; ++i) {
            const PatchSample& s = samples[batch[i]];
            const ForwardTrace t = forward_patch(params, s.patch, {dropoutRate, mix_seed(dropoutSeed, i)});
            partialLoss[c] += accumulate_backward(params, t, static_cast<double>(s.label), partial[c]);
        }
    });
    BatchGradient out{GradientSet(params.arch), 0.0};
    for (std::size_t c = 0; c < chunks; ++c) {
        accumulate(out.grads, partial[c]);
        out.lossSum += partialLoss[c];
    }
    return out;
}

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Mean loss and 0.5-threshold accuracy without dropout.
inline Evaluation evaluate(const NetworkParams& params, std::span<const PatchSample> samples,
                           std::span<const std::size_t> indices, std::size_t workers)
{
    if (indices.empty())
        return {};
    std::vector<double> loss(indices.size());
    std::vector<int> correct(indices.size());
    parallel_for(indices.size(), workers, [&](std::size_t i) {
        const PatchSample& s = samples[indices[i]];
        const ForwardTrace t = forward_patch(params, s.patch);
        loss[i] = bce_from_logit(t.logit, s.label);
        correct[i] = (t.probability >= 0.5 ? 1 : 0) == s.label;
    });
    const double n = static_cast<double>(indices.size());
    return {std::accumulate(loss.begin(), loss.end(), 0.0) / n,
            static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / n};
}

/// Mini-batch training with a seeded validation hold-out. Returns the
/// parameters of the epoch with the lowest validation loss.
inline TrainResult train(std::span<const PatchSample> samples, const TrainConfig& cfg, const Architecture& arch,
                         std::size_t workers = 1, const std::function<void(const EpochLog&)>& onEpoch = {})
{
    cfg.validate();
    if (samples.empty())
        throw ConfigError("train: dataset is empty");

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng splitRng(mix_seed(cfg.seed, 0x5A11));
    std::shuffle(order.begin(), order.end(), splitRng);
    const auto valCount = static_cast<std::size_t>(std::llround(cfg.validationFraction * samples.size()));
    std::vector<std::size_t> validation(order.begin(), order.begin() + valCount);
    std::vector<std::size_t> training(order.begin() + valCount, order.end());
    if (training.size() < cfg.batchSize)
        throw ConfigError(detail::concat("train: batch size ", cfg.batchSize, " exceeds the ", training.size(),
                                         " training examples"));

    TrainResult result{init_params(cfg.seed, arch), {}, 0};
    NetworkParams params = result.params;
    OptimizerState state(arch);
    double bestLoss = std::numeric_limits<double>::infinity();
    Rng shuffleRng(mix_seed(cfg.seed, 0x5F1E));

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(training.begin(), training.end(), shuffleRng);
        double lossSum = 0.0;
        for (std::size_t start = 0, step = 0; start < training.size(); start += cfg.batchSize, ++step) {
            const std::size_t end = std::min(training.size(), start + cfg.batchSize);
            const std::span<const std::size_t> batch(training.data() + start, end - start);
            BatchGradient bg = batch_gradient(params, samples, batch, cfg.dropoutRate,
                                              mix_seed(mix_seed(cfg.seed, epoch), step), workers);
            scale_in_place(bg.grads, 1.0 / static_cast<double>(batch.size()));
            sgd_step(params, bg.grads, state, cfg);
            lossSum += bg.lossSum;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.trainLoss = lossSum / static_cast<double>(training.size());
        const Evaluation val = validation.empty() ? Evaluation{entry.trainLoss, 0.0}
                                                  : evaluate(params, samples, validation, workers);
        entry.valLoss = val.loss;
        entry.valAccuracy = val.accuracy;
        result.log.push_back(entry);
        if (onEpoch)
            onEpoch(entry);
        if (entry.valLoss < bestLoss) {
            bestLoss = entry.valLoss;
            result.params = params;
            result.bestEpoch = epoch;
        }
    }
    return result;
}

} // namespace posegraph
