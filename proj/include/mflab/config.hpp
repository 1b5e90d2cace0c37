#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mflab/rae.hpp"
#include "mflab/toml.hpp"
#include "mflab/training.hpp"

namespace mflab {

/// Where the data distribution comes from: an explicit JSON file, or the
/// built-in quantized Gaussian mixture generator.
struct DatasetSpec {
    std::string path;  // when set, the generator keys must be absent
    std::size_t modes = 8;
    std::size_t atoms = 256;
    std::uint64_t seed = 7;
    double radius = 4.0;
    double sigma = 0.35;
};

struct EncoderSettings {
    std::size_t d_z = 16;
    std::uint64_t seed = 99;
    bool tanh_lift = false;
};

struct SampleSettings {
    std::size_t n = 1024;
    long nfe = 1;
    std::vector<double> step_times;  // explicit times override the uniform nfe split
    std::size_t metrics_draws = 0;   // dataset draws to score against; 0 = skip
};

/// Everything one experiment needs, parsed from a single TOML file. Unknown
/// keys and sections are hard errors so typos cannot silently fall back to
/// defaults. Stage sections ([pretrain], [cmt], [mfd], [mft]) may be absent,
/// in which case that stage is simply not configured.
struct ExperimentConfig {
    std::uint64_t seed = 1234;
    std::string output_dir;
    DatasetSpec dataset;
    EncoderSettings encoder;
    DecoderConfig decoder;
    std::size_t net_hidden = 256;
    std::size_t net_depth = 4;
    std::size_t net_frequencies = 32;
    double net_max_period = 20.0;
    bool net_zero_final = true;
    std::optional<TrainConfig> pretrain, cmt, mfd, mft;
    SampleSettings sample;
    std::string source_text;  // verbatim file contents, snapshotted into checkpoints

    /// Trunk/ embedding settings combined with the runtime data shape.
    NetConfig make_net_config(std::size_t dim, int num_classes) const;
    void validate() const;
};

/// Per-stage defaults before the config file overrides them. The learning
/// rates and iteration counts are desk-scale choices, not tuned claims.
TrainConfig stage_defaults(const std::string& stage);

ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace mflab
