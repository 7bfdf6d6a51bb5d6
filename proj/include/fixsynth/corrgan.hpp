#pragma once

// DCGAN baseline and Wasserstein variant for n x n correlation matrices.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/market_data.hpp"
#include "fixsynth/nn.hpp"

namespace fixsynth {

enum class GanVariant { dcgan, wgan };
enum class Lipschitz { weight_clip, none };

std::string to_string(GanVariant v);
std::string to_string(Lipschitz l);

struct GanConfig {
    std::size_t n = 16;
    std::size_t latent_dim = 32;
    std::vector<std::size_t> generator_channels = {8, 8};  // one upsampling block per entry
    std::size_t upsample_factor = 2;
    std::vector<std::size_t> critic_channels = {8, 16};     // one stride-2 conv per entry
    double leaky_slope = 0.2;
    GanVariant variant = GanVariant::wgan;
    Lipschitz lipschitz = Lipschitz::weight_clip;
    double clip = 0.03;
    std::size_t critic_steps = 5;
    std::size_t batch = 32;
    double lr_generator = 1e-3;
    double lr_critic = 1e-3;
    double beta1 = 0.0;  // 0 gives the RMS-style update
    double beta2 = 0.99;
    std::size_t steps = 2000;
    std::uint64_t seed = 0;
    double collapse_threshold = 1e-3;  // mean pairwise Frobenius spread of a generated batch
    std::size_t collapse_window = 500;

    /// Per-variant defaults (learning rates, betas, Lipschitz mechanism, critic schedule).
    static GanConfig defaults(GanVariant variant);

    /// Spatial size of the latent seed map; throws when n is not seed * factor^blocks.
    std::size_t seed_size() const;
    void validate() const;
    nlohmann::json to_json() const;
    /// Starts from defaults(variant in j, or the base's) and overrides present keys.
    static GanConfig from_json(const nlohmann::json& j, const std::string& path = "gan");
};

Sequential build_generator(const GanConfig& cfg);
Sequential build_critic(const GanConfig& cfg);

struct GanStep {
    double critic_loss;
    double generator_loss;
    double critic_gap;  // mean critic score on real minus fake
    double spread;      // mean pairwise Frobenius distance in the generator batch
};

struct GanHistory {
    std::vector<GanStep> steps;
    bool collapse_warning = false;
    std::size_t collapse_step = 0;  // step at which the warning fired
};

struct TrainedGan {
    GanConfig config;
    Sequential generator;
    Sequential critic;
    GanHistory history;
};

using GanProgress = std::function<void(std::size_t step, const GanStep&)>;

/// Alternating critic/generator optimization on single-channel n x n maps.
TrainedGan train_gan(std::span<const CorrelationMatrix> corpus, const GanConfig& cfg, const GanProgress& progress = {});

/// Raw generator outputs for `count` latents keyed by seed, symmetrized; [count, n, n] row-major.
std::vector<Eigen::MatrixXd> generate_raw(const TrainedGan& gan, std::size_t count, std::uint64_t seed,
                                          std::size_t workers = 0);

struct SampleResult {
    std::vector<CorrelationMatrix> matrices;
    std::size_t failed = 0;  // projection failures, skipped
};

/// Symmetrize, reset the diagonal and project. Throws NumericalError if more than 1% fail.
SampleResult sample_gan(const TrainedGan& gan, std::size_t count, std::uint64_t seed,
                        const std::vector<std::string>& asset_ids = {}, std::size_t workers = 0);

/// Mean diagonal of the symmetrized raw outputs.
double raw_diagonal_mean(const TrainedGan& gan, std::size_t count, std::uint64_t seed, std::size_t workers = 0);

/// Discriminator probability for DCGAN, raw critic score for WGAN; one value per input map.
std::vector<double> critic_scores(const TrainedGan& gan, std::span<const CorrelationMatrix> matrices);

void save_gan(const TrainedGan& gan, const std::filesystem::path& path);
TrainedGan load_gan(const std::filesystem::path& path);

}  // namespace fixsynth
