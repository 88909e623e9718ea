#pragma once

#include "epb/embedstore.hpp"
#include "epb/optim.hpp"
#include "epb/probe_math.hpp"
#include "epb/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace epb {

std::string_view to_string(ProbeKind kind);
ProbeKind parse_probe_kind(std::string_view name);

struct ProbeConfig {
    ProbeKind kind = ProbeKind::linear;
    std::size_t input_dim = 0;
    std::size_t hidden = 1024;
    double dropout = 0.1;
    std::size_t classes = 0;
    Labeling labeling = Labeling::single_label;
    std::size_t epochs = 3;
    std::size_t batch = 16;
    double lr = 1e-3;
    double warmup = 0.1;
    std::uint64_t seed = 0;
    std::size_t replicas = 3;

    /// Throws std::invalid_argument describing the first violated bound.
    void validate() const;

    probe_math::Shape shape() const;
    std::size_t parameter_count() const { return shape().param_count(); }
};

struct TrainingLog {
    std::vector<double> step_loss;           // selected replica
    std::vector<double> epoch_dev_accuracy;  // selected replica, percent
    std::vector<double> replica_dev_accuracy;
    std::size_t selected_replica = 0;
    unsigned threads = 1;
};

struct ProbeModel {
    ProbeConfig config;
    std::vector<float> params;
    TrainingLog log;
    // Set by the pipeline so saved models can be traced to their run.
    std::string manifest_digest;
};

/// Glorot-uniform weights and zero biases drawn from the config seed and the
/// replica index.
ProbeModel init(const ProbeConfig& config, std::size_t replica = 0);

enum class Mode { train, eval };

/// Class probabilities for one vector. Dropout applies only in train mode
/// and draws from `rng`, which may be null in eval mode.
std::vector<double> forward(const ProbeModel& model, std::span<const float> vector, Mode mode,
                            Rng* rng = nullptr);

/// Argmax (ties to the lowest index) or the classes above 0.5.
LabelSet decide(std::span<const double> probabilities, Labeling labeling);

std::vector<LabelSet> predict(const ProbeModel& model, const PooledSet& data);
std::vector<std::vector<double>> predict_proba(const ProbeModel& model, const PooledSet& data);

/// Accuracy in percent for single-label models, micro-F1 for multi-label.
double selection_score(const ProbeModel& model, const PooledSet& data);

/// Index of the best score, the lowest index winning ties.
std::size_t select_best_replica(std::span<const double> scores);

/// Trains `replicas` independently seeded probes and keeps the best on dev.
/// With an empty dev set only the first replica is trained. Throws
/// NumericError naming the step when the loss turns non-finite.
ProbeModel train(const ProbeConfig& config, const PooledSet& train, const PooledSet& dev);

void save_model(const std::filesystem::path& path, const ProbeModel& model);
ProbeModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const ProbeModel& model);
ProbeModel parse_model(std::span<const std::uint8_t> bytes);

} // namespace epb
