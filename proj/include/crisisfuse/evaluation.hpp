#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crisisfuse/fusion.hpp"

namespace crisisfuse {

/// counts[gold][predicted]; axes follow the task's class order.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 2);
    ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts);

    std::size_t classes() const { return counts_.size(); }
    std::uint64_t at(std::size_t gold, std::size_t predicted) const { return counts_.at(gold).at(predicted); }
    void add(std::size_t gold, std::size_t predicted, std::uint64_t n = 1);

    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(std::size_t gold) const;
    std::uint64_t col_sum(std::size_t predicted) const;
    const std::vector<std::vector<std::uint64_t>>& counts() const { return counts_; }

    /// Reorders both axes: new index i takes old index order[i].
    ConfusionMatrix permuted(std::span<const std::size_t> order) const;

private:
    std::vector<std::vector<std::uint64_t>> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> gold, std::span<const int> predicted, std::size_t classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct AveragedMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Fractions in [0,1]. Zero denominators yield 0.
struct EvalReport {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    AveragedMetrics weighted;
    AveragedMetrics macro;
    std::uint64_t total = 0;
};

EvalReport classification_report(const ConfusionMatrix& cm);

/// One-decimal percentage, as reported in result tables.
double as_percent(double fraction);

struct Evaluation {
    ConfusionMatrix matrix;
    EvalReport report;
    std::vector<Prediction> predictions;
};

/// Inference over a split followed by the two metrics steps above.
Evaluation evaluate(Classifier<float>& model, const std::vector<Sample>& split, ImageLoader* loader,
                    std::size_t batch_size = 32);

/// Plain-text matrix with rows = human (gold) labels, columns = predictions.
std::string render_confusion_matrix(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);
/// Parses the rendering above back into counts and class names.
ConfusionMatrix parse_confusion_matrix(std::string_view text, std::vector<std::string>* class_names = nullptr);

/// Machine-readable report: accuracy, weighted and macro rows, per-class section.
std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names);

}  // namespace crisisfuse
