#include "epb/metrics.hpp"

#include "epb/errors.hpp"
#include "epb/numfmt.hpp"

#include "json.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace epb {

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes, Labeling labeling)
    : classes_(num_classes), labeling_(labeling) {
    if (num_classes == 0) {
        throw std::invalid_argument("confusion accumulator needs at least one class");
    }
    if (labeling == Labeling::single_label) {
        matrix_.assign(num_classes * num_classes, 0);
    } else {
        tp_.assign(num_classes, 0);
        fp_.assign(num_classes, 0);
        fn_.assign(num_classes, 0);
        tn_.assign(num_classes, 0);
    }
}

void ConfusionAccumulator::add(const LabelSet& gold, const LabelSet& predicted) {
    auto check = [&](const LabelSet& labels) {
        for (const auto c : labels) {
            if (c >= classes_) {
                throw DataError("label index " + std::to_string(c) + " outside vocabulary of " +
                                std::to_string(classes_));
            }
        }
    };
    check(gold);
    check(predicted);
    if (labeling_ == Labeling::single_label) {
        if (gold.size() != 1 || predicted.size() != 1) {
            throw DataError("single-label metrics need exactly one gold and one predicted label");
        }
        ++matrix_[gold[0] * classes_ + predicted[0]];
    } else {
        std::vector<bool> in_gold(classes_, false), in_pred(classes_, false);
        for (const auto c : gold) in_gold[c] = true;
        for (const auto c : predicted) in_pred[c] = true;
        bool same = true;
        for (std::size_t c = 0; c < classes_; ++c) {
            if (in_gold[c] && in_pred[c]) ++tp_[c];
            else if (in_pred[c]) ++fp_[c];
            else if (in_gold[c]) ++fn_[c];
            else ++tn_[c];
            same = same && in_gold[c] == in_pred[c];
        }
        if (same) ++exact_;
        ++total_;
        return;
    }
    if (gold[0] == predicted[0]) ++exact_;
    ++total_;
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    if (other.classes_ != classes_ || other.labeling_ != labeling_) {
        throw std::invalid_argument("cannot merge accumulators of different shapes");
    }
    auto add_into = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add_into(matrix_, other.matrix_);
    add_into(tp_, other.tp_);
    add_into(fp_, other.fp_);
    add_into(fn_, other.fn_);
    add_into(tn_, other.tn_);
    total_ += other.total_;
    exact_ += other.exact_;
}

std::uint64_t ConfusionAccumulator::true_positives(std::size_t c) const {
    if (labeling_ == Labeling::multi_label) return tp_.at(c);
    return cell(c, c);
}

std::uint64_t ConfusionAccumulator::false_positives(std::size_t c) const {
    if (labeling_ == Labeling::multi_label) return fp_.at(c);
    std::uint64_t column = 0;
    for (std::size_t g = 0; g < classes_; ++g) column += cell(g, c);
    return column - cell(c, c);
}

std::uint64_t ConfusionAccumulator::false_negatives(std::size_t c) const {
    if (labeling_ == Labeling::multi_label) return fn_.at(c);
    std::uint64_t row = 0;
    for (std::size_t p = 0; p < classes_; ++p) row += cell(c, p);
    return row - cell(c, c);
}

std::uint64_t ConfusionAccumulator::true_negatives(std::size_t c) const {
    if (labeling_ == Labeling::multi_label) return tn_.at(c);
    return total_ - true_positives(c) - false_positives(c) - false_negatives(c);
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

double binary_mcc(double tp, double fp, double fn, double tn) {
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    return den == 0.0 ? 0.0 : (tp * tn - fp * fn) / den;
}

// Covariance form over the full confusion matrix.
double multiclass_mcc(const ConfusionAccumulator& m) {
    const std::size_t k = m.num_classes();
    const double s = static_cast<double>(m.total());
    double c = 0.0, pt = 0.0, pp = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row += static_cast<double>(m.cell(i, j));
            col += static_cast<double>(m.cell(j, i));
        }
        c += static_cast<double>(m.cell(i, i));
        pt += col * row;
        pp += col * col;
        tt += row * row;
    }
    const double den = std::sqrt((s * s - pp) * (s * s - tt));
    return den == 0.0 ? 0.0 : (c * s - pt) / den;
}

} // namespace

MetricReport compute_metrics(const ConfusionAccumulator& m) {
    MetricReport r;
    r.n = m.total();
    r.multi_label = m.labeling() == Labeling::multi_label;
    if (r.n == 0) {
        return r;
    }
    const std::size_t k = m.num_classes();
    std::uint64_t support_total = 0;
    std::uint64_t tp_total = 0, fp_total = 0, fn_total = 0, tn_total = 0;
    double wp = 0.0, wf = 0.0, mp = 0.0, mr = 0.0, mf = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const auto tp = m.true_positives(c);
        const auto fp = m.false_positives(c);
        const auto fn = m.false_negatives(c);
        const std::uint64_t support = tp + fn;
        const double p = ratio(tp, tp + fp);
        const double rc = ratio(tp, support);
        const double f = f1(p, rc);
        wp += static_cast<double>(support) * p;
        wf += static_cast<double>(support) * f;
        mp += p;
        mr += rc;
        mf += f;
        support_total += support;
        tp_total += tp;
        fp_total += fp;
        fn_total += fn;
        tn_total += m.true_negatives(c);
    }
    const double kd = static_cast<double>(k);
    r.accuracy = 100.0 * ratio(m.exact_matches(), r.n);
    if (support_total > 0) {
        const double st = static_cast<double>(support_total);
        r.weighted_precision = 100.0 * wp / st;
        r.weighted_f1 = 100.0 * wf / st;
        // support-weighted recall reduces to TP / support exactly; for
        // single-label data this is the accuracy.
        r.weighted_recall = 100.0 * ratio(tp_total, support_total);
    }
    r.macro_precision = 100.0 * mp / kd;
    r.macro_recall = 100.0 * mr / kd;
    r.macro_f1 = 100.0 * mf / kd;
    if (r.multi_label) {
        r.micro_f1 = 100.0 * f1(ratio(tp_total, tp_total + fp_total),
                                ratio(tp_total, tp_total + fn_total));
        r.mcc = binary_mcc(static_cast<double>(tp_total), static_cast<double>(fp_total),
                           static_cast<double>(fn_total), static_cast<double>(tn_total));
    } else {
        r.mcc = multiclass_mcc(m);
    }
    return r;
}

MetricReport compute_metrics(std::span<const LabelSet> gold, std::span<const LabelSet> predicted,
                             const TaskSchema& schema) {
    if (gold.size() != predicted.size()) {
        throw std::invalid_argument("gold and predicted lengths differ: " +
                                    std::to_string(gold.size()) + " vs " +
                                    std::to_string(predicted.size()));
    }
    ConfusionAccumulator acc(schema.num_classes(), schema.labeling());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        acc.add(gold[i], predicted[i]);
    }
    return compute_metrics(acc);
}

namespace {

struct Column {
    const char* name;
    double MetricReport::*field;
};

constexpr Column kColumns[] = {
    {"accuracy", &MetricReport::accuracy},
    {"weighted_precision", &MetricReport::weighted_precision},
    {"weighted_recall", &MetricReport::weighted_recall},
    {"weighted_f1", &MetricReport::weighted_f1},
    {"macro_precision", &MetricReport::macro_precision},
    {"macro_recall", &MetricReport::macro_recall},
    {"macro_f1", &MetricReport::macro_f1},
    {"mcc", &MetricReport::mcc},
    {"micro_f1", &MetricReport::micro_f1},
};

} // namespace

std::string metrics_to_tsv(const MetricReport& report) {
    std::ostringstream os;
    os << "metric\tvalue\n";
    for (const auto& col : kColumns) {
        if (col.field == &MetricReport::micro_f1 && !report.multi_label) continue;
        const double v = report.*col.field;
        os << col.name << '\t'
           << (col.field == &MetricReport::mcc ? format_fixed(v, 4) : format_fixed(v)) << '\n';
    }
    os << "n\t" << report.n << '\n';
    return os.str();
}

std::string metrics_to_json(const MetricReport& report) {
    nlohmann::json j;
    for (const auto& col : kColumns) {
        if (col.field == &MetricReport::micro_f1 && !report.multi_label) continue;
        j[col.name] = report.*col.field;
    }
    j["n"] = report.n;
    j["multi_label"] = report.multi_label;
    return j.dump(2);
}

std::string metrics_to_markdown(const MetricReport& r) {
    std::ostringstream os;
    os << "| Accuracy | W. Prec | W. Recall | W. F1 | M. Recall | Macro F1 | M. Prec | Mcc";
    if (r.multi_label) os << " | Micro F1";
    os << " |\n|---:|---:|---:|---:|---:|---:|---:|---:";
    if (r.multi_label) os << "|---:";
    os << "|\n| " << format_fixed(r.accuracy) << " | " << format_fixed(r.weighted_precision)
       << " | " << format_fixed(r.weighted_recall) << " | " << format_fixed(r.weighted_f1)
       << " | " << format_fixed(r.macro_recall) << " | " << format_fixed(r.macro_f1) << " | "
       << format_fixed(r.macro_precision) << " | " << format_fixed(r.mcc, 4);
    if (r.multi_label) os << " | " << format_fixed(r.micro_f1);
    os << " |\n";
    return os.str();
}

double drop_percent(double acc_original, double acc_filtered) {
    if (acc_original == 0.0) {
        throw DataError("drop is undefined for zero original accuracy");
    }
    return (acc_original - acc_filtered) * 100.0 / acc_original;
}

std::string_view to_string(PairClass value) {
    switch (value) {
    case PairClass::higher:
        return "higher";
    case PairClass::higher_significant:
        return "higher-significant";
    case PairClass::lower:
        return "lower";
    case PairClass::equal:
        return "equal";
    }
    return "?";
}

PairClass classify_pair(double base_drop, double random_drop, double ratio) {
    const double base = round_half_up(base_drop);
    const double random = round_half_up(random_drop);
    if (random > base) {
        return base > 0.0 && random > ratio * base ? PairClass::higher_significant
                                                    : PairClass::higher;
    }
    if (random < base) {
        return PairClass::lower;
    }
    return PairClass::equal;
}

std::string markup_cell(double drop, PairClass relation) {
    const std::string text = format_fixed(drop);
    switch (relation) {
    case PairClass::higher:
    case PairClass::higher_significant:
        return "**" + text + "**";
    case PairClass::lower:
        return "*" + text + "*";
    case PairClass::equal:
        break;
    }
    return text;
}

DropReport make_drop_report(double acc_original, double acc_filtered) {
    return DropReport{acc_original, acc_filtered, drop_percent(acc_original, acc_filtered)};
}

} // namespace epb
