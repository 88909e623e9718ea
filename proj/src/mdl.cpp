#include "epb/mdl.hpp"

#include "epb/errors.hpp"

#include "json.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace epb {

double codelength_bits(std::span<const double> gold_probabilities) {
    double bits = 0.0;
    for (const double p : gold_probabilities) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
            throw NumericError("invalid gold probability " + std::to_string(p));
        }
        bits -= std::log2(std::max(p, kProbabilityFloor));
    }
    return bits;
}

double gold_probability(std::span<const double> probabilities, const LabelSet& gold,
                        Labeling labeling) {
    if (labeling == Labeling::single_label) {
        return probabilities[gold.at(0)];
    }
    double joint = 1.0;
    std::size_t g = 0;
    for (std::size_t c = 0; c < probabilities.size(); ++c) {
        const bool positive = g < gold.size() && gold[g] == c;
        if (positive) ++g;
        joint *= positive ? probabilities[c] : 1.0 - probabilities[c];
    }
    return joint;
}

double data_codelength(const ProbeModel& model, const PooledSet& data) {
    std::vector<double> gold(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto probs = forward(model, data.row(i), Mode::eval);
        gold[i] = gold_probability(probs, data.gold[i], model.config.labeling);
    }
    return codelength_bits(gold);
}

double complexity_bits(std::uint64_t p, std::uint64_t n) {
    if (p == 0 || n == 0) {
        return 0.0;
    }
    return static_cast<double>(p) / 2.0 * std::log2(static_cast<double>(n));
}

Codelength two_part_codelength(const ProbeModel& model, const PooledSet& data) {
    if (data.size() == 0) {
        throw DataError("two-part codelength needs at least one example");
    }
    Codelength code;
    code.n = data.size();
    code.p = model.params.size();
    code.data_bits = data_codelength(model, data);
    code.complexity_bits = complexity_bits(code.p, code.n) + code.c_k;
    code.total_bits = code.data_bits + code.complexity_bits;
    return code;
}

double uniform_bits_per_example(std::size_t classes, Labeling labeling) {
    return labeling == Labeling::single_label ? std::log2(static_cast<double>(classes))
                                              : static_cast<double>(classes);
}

PrequentialSchedule PrequentialSchedule::standard() {
    return PrequentialSchedule{
        {0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.0625, 0.125, 0.25, 0.5, 1.0}};
}

PrequentialSchedule PrequentialSchedule::parse(std::string_view text) {
    if (text == "default") {
        return standard();
    }
    PrequentialSchedule schedule;
    std::stringstream ss{std::string(text)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double percent = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            schedule.fractions.push_back(percent / 100.0);
        } catch (const std::logic_error&) {
            throw std::invalid_argument("bad schedule entry '" + item + "'");
        }
    }
    schedule.validate();
    return schedule;
}

void PrequentialSchedule::validate() const {
    if (fractions.empty()) {
        throw std::invalid_argument("empty prequential schedule");
    }
    double previous = 0.0;
    for (const double f : fractions) {
        if (!(f > previous) || f > 1.0) {
            throw std::invalid_argument("schedule fractions must increase strictly within (0, 1]");
        }
        previous = f;
    }
    if (fractions.back() != 1.0) {
        throw std::invalid_argument("schedule must end at 100%");
    }
}

std::vector<std::size_t> PrequentialSchedule::block_ends(std::size_t n) const {
    validate();
    std::vector<std::size_t> ends;
    std::size_t previous = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const auto end = static_cast<std::size_t>(std::llround(fractions[i] * static_cast<double>(n)));
        if (end <= previous) {
            throw DataError("prequential block " + std::to_string(i) + " has zero examples for n = " +
                            std::to_string(n));
        }
        ends.push_back(end);
        previous = end;
    }
    return ends;
}

PrequentialResult prequential_codelength(const ProbeConfig& config, const PooledSet& stream,
                                         const PrequentialSchedule& schedule, std::uint64_t seed) {
    config.validate();
    PrequentialResult result;
    result.n = stream.size();
    result.block_ends = schedule.block_ends(stream.size());
    const double per_example = uniform_bits_per_example(config.classes, config.labeling);
    result.uniform_bits = static_cast<double>(result.n) * per_example;

    std::vector<std::size_t> order(stream.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(seed, Stream::prequential_order)).shuffle(std::span<std::size_t>(order));
    const PooledSet shuffled = stream.subset(order);

    const std::size_t first = result.block_ends.front();
    result.block_bits.push_back(static_cast<double>(first) * per_example);
    const PooledSet no_dev;
    for (std::size_t k = 1; k < result.block_ends.size(); ++k) {
        const std::size_t start = result.block_ends[k - 1];
        const std::size_t end = result.block_ends[k];
        std::vector<std::size_t> seen(start), block(end - start);
        std::iota(seen.begin(), seen.end(), std::size_t{0});
        std::iota(block.begin(), block.end(), start);

        ProbeConfig block_config = config;
        block_config.replicas = 1;
        block_config.seed = derive_seed(seed, Stream::prequential_block, k);
        const ProbeModel model = train(block_config, shuffled.subset(seen), no_dev);
        result.block_bits.push_back(data_codelength(model, shuffled.subset(block)));
    }
    result.total_bits = std::accumulate(result.block_bits.begin(), result.block_bits.end(), 0.0);
    return result;
}

namespace {

EncoderComparison compare_totals(double reference, double candidate) {
    EncoderComparison out;
    out.reference_bits = reference;
    out.candidate_bits = candidate;
    out.difference = reference - candidate;
    out.ratio = reference == 0.0 ? (candidate == 0.0 ? 1.0 : INFINITY) : candidate / reference;
    return out;
}

} // namespace

EncoderComparison compare_encoders(const Codelength& reference, const Codelength& candidate) {
    if (reference.n != candidate.n) {
        throw DataError("codelengths cover different dataset sizes (" +
                        std::to_string(reference.n) + " vs " + std::to_string(candidate.n) + ")");
    }
    return compare_totals(reference.total_bits, candidate.total_bits);
}

EncoderComparison compare_encoders(const PrequentialResult& reference,
                                   const PrequentialResult& candidate) {
    if (reference.n != candidate.n || reference.block_ends != candidate.block_ends) {
        throw DataError("prequential codes cover different streams or schedules");
    }
    return compare_totals(reference.total_bits, candidate.total_bits);
}

std::string codelength_to_json(const Codelength& code) {
    return nlohmann::json{{"data_bits", code.data_bits},
                          {"complexity_bits", code.complexity_bits},
                          {"total_bits", code.total_bits},
                          {"n", code.n},
                          {"p", code.p},
                          {"c_k", code.c_k}}
        .dump(2);
}

std::string prequential_to_json(const PrequentialResult& result) {
    return nlohmann::json{{"total_bits", result.total_bits},
                          {"uniform_bits", result.uniform_bits},
                          {"n", result.n},
                          {"block_ends", result.block_ends},
                          {"block_bits", result.block_bits}}
        .dump(2);
}

std::string comparison_to_json(const EncoderComparison& comparison) {
    return nlohmann::json{{"reference_bits", comparison.reference_bits},
                          {"candidate_bits", comparison.candidate_bits},
                          {"difference", comparison.difference},
                          {"ratio", comparison.ratio}}
        .dump(2);
}

} // namespace epb
