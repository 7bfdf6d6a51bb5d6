#pragma once

// Encoder-decoder translating a correlation matrix into volatility, expected-return
// and forward-return vectors through three parallel decoder heads.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixsynth/market_data.hpp"
#include "fixsynth/nn.hpp"

namespace fixsynth {

struct AttributeVectors {
    Eigen::VectorXd volatility;       // decimal per year, > 0
    Eigen::VectorXd expected_return;  // decimal per year
    Eigen::VectorXd forward_return;   // decimal per horizon
    std::vector<std::string> asset_ids;
};

struct AeHeadConfig {
    std::size_t seed_channels = 8;            // channels of the map the linear layer produces
    std::vector<std::size_t> channels = {8};  // one conv1d + upsample block per entry
    std::size_t upsample_factor = 2;
    std::size_t kernel = 3;
};

struct AeConfig {
    std::size_t n = 16;
    std::vector<std::size_t> encoder_channels = {4, 8};  // one stride-2 conv2d block per entry
    std::size_t encoder_kernel = 3;
    double dropout = 0.3;
    std::size_t latent_dim = 8;
    AeHeadConfig head;
    double leaky_slope = 0.2;
    std::size_t batch = 64;
    double lr = 1e-4;
    std::size_t steps = 2000;
    double validation_fraction = 0.1;  // trailing share of dates held out
    std::size_t eval_interval = 100;   // validation cadence; 0 disables checkpoint selection
    std::uint64_t seed = 0;

    /// Length of each head's first feature map; throws when n is not a multiple of factor^blocks.
    std::size_t head_seed_length() const;
    void validate() const;
    nlohmann::json to_json() const;
    static AeConfig from_json(const nlohmann::json& j, const std::string& path = "ae");
};

/// Per-component standardization from the training split.
struct ComponentStats {
    double mean = 0.0;
    double stdev = 1.0;
};

struct AeStats {
    ComponentStats volatility, expected_return, forward_return;
};

struct AeStep {
    double volatility;
    double expected_return;
    double forward_return;
    double total() const noexcept { return volatility + expected_return + forward_return; }
};

struct AeHistory {
    std::vector<AeStep> steps;
    std::size_t train_count = 0;
    std::size_t validation_count = 0;
    std::optional<AeStep> validation;  // held-out losses of the returned parameters
    std::vector<std::pair<std::size_t, AeStep>> validation_curve;  // (steps done, held-out losses)
    std::size_t selected_step = 0;     // steps done when the returned parameters were current
};

struct AttrModel {
    AeConfig config;
    Sequential encoder;
    Sequential volatility_head;
    Sequential expected_return_head;
    Sequential forward_return_head;
    AeStats stats;
    AeHistory history;
    std::vector<std::string> asset_ids;
};

/// Untrained model with unit statistics.
AttrModel build_attr_model(const AeConfig& cfg);

using AeProgress = std::function<void(std::size_t step, const AeStep&)>;

/// Minimizes the sum of the three standardized MSEs on the leading dates; the trailing
/// validation_fraction of dates is held out. With a non-empty held-out split and
/// eval_interval > 0 the returned parameters are the checkpoint with the lowest held-out loss.
AttrModel train_attr_model(std::span<const MarketSnapshot> snapshots, const AeConfig& cfg,
                           const AeProgress& progress = {});

/// Deterministic eval-mode translation, de-standardized to natural units.
AttributeVectors generate(const AttrModel& model, const CorrelationMatrix& corr);
std::vector<AttributeVectors> generate(const AttrModel& model, std::span<const CorrelationMatrix> corrs,
                                       std::size_t workers = 0);

/// Snapshots pairing each matrix with its generated attribute vectors; dates are a
/// placeholder weekly sequence, since synthetic samples carry no calendar position.
std::vector<MarketSnapshot> synthesize_snapshots(const AttrModel& model, std::span<const CorrelationMatrix> corrs,
                                                 std::size_t workers = 0);

/// Standardized per-component losses of the model on `snapshots`.
AeStep evaluate_attr_model(const AttrModel& model, std::span<const MarketSnapshot> snapshots);

/// Index where the held-out dates start: snapshots [split, count) are validation.
std::size_t validation_split(std::size_t count, double fraction);

void save_attr_model(const AttrModel& model, const std::filesystem::path& path);
AttrModel load_attr_model(const std::filesystem::path& path);

}  // namespace fixsynth
