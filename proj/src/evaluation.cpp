#include "crisisfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace crisisfuse {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : counts_(classes, std::vector<std::uint64_t>(classes, 0))
{
    if (classes == 0) throw ParameterError("confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts) : counts_(std::move(counts))
{
    if (counts_.empty()) throw ParameterError("confusion matrix needs at least one class");
    for (const auto& row : counts_) {
        if (row.size() != counts_.size()) throw DimensionError("confusion matrix must be square");
    }
}

void ConfusionMatrix::add(std::size_t gold, std::size_t predicted, std::uint64_t n)
{
    counts_.at(gold).at(predicted) += n;
}

std::uint64_t ConfusionMatrix::total() const
{
    std::uint64_t t = 0;
    for (const auto& row : counts_) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

std::uint64_t ConfusionMatrix::trace() const
{
    std::uint64_t t = 0;
    for (std::size_t k = 0; k < counts_.size(); ++k) t += counts_[k][k];
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t gold) const
{
    const auto& row = counts_.at(gold);
    return std::accumulate(row.begin(), row.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const
{
    std::uint64_t t = 0;
    for (const auto& row : counts_) t += row.at(predicted);
    return t;
}

ConfusionMatrix ConfusionMatrix::permuted(std::span<const std::size_t> order) const
{
    if (order.size() != classes()) throw DimensionError("permutation size does not match class count");
    std::vector<std::vector<std::uint64_t>> out(classes(), std::vector<std::uint64_t>(classes()));
    for (std::size_t i = 0; i < classes(); ++i) {
        for (std::size_t j = 0; j < classes(); ++j) out[i][j] = counts_.at(order[i]).at(order[j]);
    }
    return ConfusionMatrix(std::move(out));
}

ConfusionMatrix confusion_matrix(std::span<const int> gold, std::span<const int> predicted, std::size_t classes)
{
    if (gold.size() != predicted.size()) {
        throw DimensionError("confusion_matrix: " + std::to_string(gold.size()) + " gold labels vs " +
                             std::to_string(predicted.size()) + " predictions");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        for (const int v : {gold[i], predicted[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= classes) {
                throw LabelError("confusion_matrix: class id " + std::to_string(v) + " at index " + std::to_string(i) +
                                 " outside [0," + std::to_string(classes) + ")");
            }
        }
        cm.add(static_cast<std::size_t>(gold[i]), static_cast<std::size_t>(predicted[i]));
    }
    return cm;
}

EvalReport classification_report(const ConfusionMatrix& cm)
{
    const auto total = cm.total();
    if (total == 0) throw InputError("classification_report: confusion matrix is empty");
    const auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    EvalReport r;
    r.total = total;
    r.accuracy = ratio(cm.trace(), total);
    const std::size_t k = cm.classes();
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics m;
        m.support = cm.row_sum(c);
        m.precision = ratio(cm.at(c, c), cm.col_sum(c));
        m.recall = ratio(cm.at(c, c), m.support);
        const double denom = m.precision + m.recall;
        m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
        const double weight = static_cast<double>(m.support) / static_cast<double>(total);
        r.weighted.precision += weight * m.precision;
        r.weighted.recall += weight * m.recall;
        r.weighted.f1 += weight * m.f1;
        r.macro.precision += m.precision / static_cast<double>(k);
        r.macro.recall += m.recall / static_cast<double>(k);
        r.macro.f1 += m.f1 / static_cast<double>(k);
        r.per_class.push_back(m);
    }
    return r;
}

double as_percent(double fraction) { return std::round(fraction * 1000.0) / 10.0; }

Evaluation evaluate(Classifier<float>& model, const std::vector<Sample>& split, ImageLoader* loader,
                    std::size_t batch_size)
{
    if (split.empty()) throw InputError("evaluate: split is empty");
    Evaluation out{ConfusionMatrix(model.config().num_classes), {}, predict_all(model, split, loader, batch_size)};
    std::vector<int> gold, pred;
    for (std::size_t i = 0; i < split.size(); ++i) {
        gold.push_back(split[i].label);
        pred.push_back(out.predictions[i].label);
    }
    out.matrix = confusion_matrix(gold, pred, model.config().num_classes);
    out.report = classification_report(out.matrix);
    return out;
}

std::string render_confusion_matrix(const ConfusionMatrix& cm, const std::vector<std::string>& class_names)
{
    if (class_names.size() != cm.classes()) throw DimensionError("one class name per matrix row is required");
    std::size_t label_w = std::string("human\\predicted").size();
    for (const auto& n : class_names) label_w = std::max(label_w, n.size());
    std::vector<std::size_t> col_w;
    for (std::size_t j = 0; j < cm.classes(); ++j) {
        std::size_t w = class_names[j].size();
        for (std::size_t i = 0; i < cm.classes(); ++i) w = std::max(w, std::to_string(cm.at(i, j)).size());
        col_w.push_back(w);
    }
    std::ostringstream out;
    out << "# rows: human (gold) labels; columns: predicted labels\n";
    out << std::left << std::setw(static_cast<int>(label_w)) << "human\\predicted";
    for (std::size_t j = 0; j < cm.classes(); ++j) out << "  " << std::right << std::setw(static_cast<int>(col_w[j])) << class_names[j];
    out << '\n';
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        out << std::left << std::setw(static_cast<int>(label_w)) << class_names[i];
        for (std::size_t j = 0; j < cm.classes(); ++j) {
            out << "  " << std::right << std::setw(static_cast<int>(col_w[j])) << cm.at(i, j);
        }
        out << '\n';
    }
    return out.str();
}

ConfusionMatrix parse_confusion_matrix(std::string_view text, std::vector<std::string>* class_names)
{
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<std::string> header;
    std::vector<std::vector<std::uint64_t>> rows;
    std::vector<std::string> row_names;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        std::istringstream fields(line);
        std::vector<std::string> cells;
        std::string cell;
        while (fields >> cell) cells.push_back(cell);
        if (cells.empty()) continue;
        if (header.empty()) {
            header.assign(cells.begin() + 1, cells.end());
            continue;
        }
        if (cells.size() != header.size() + 1) {
            throw FormatError("confusion matrix line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " counts");
        }
        std::vector<std::uint64_t> row;
        for (std::size_t j = 1; j < cells.size(); ++j) {
            try {
                std::size_t used = 0;
                row.push_back(std::stoull(cells[j], &used));
                if (used != cells[j].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw FormatError("confusion matrix line " + std::to_string(line_no) + ": bad count " + cells[j]);
            }
        }
        row_names.push_back(cells[0]);
        rows.push_back(std::move(row));
    }
    if (header.empty() || rows.size() != header.size()) throw FormatError("confusion matrix must be square");
    if (row_names != header) throw FormatError("confusion matrix row labels differ from column labels");
    if (class_names != nullptr) *class_names = header;
    return ConfusionMatrix(std::move(rows));
}

std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names)
{
    if (class_names.size() != report.per_class.size()) throw DimensionError("one class name per class is required");
    nlohmann::ordered_json j;
    j["total"] = report.total;
    j["accuracy"] = report.accuracy;
    j["accuracy_percent"] = as_percent(report.accuracy);
    const auto avg = [](const AveragedMetrics& m) {
        nlohmann::ordered_json o;
        o["precision"] = m.precision;
        o["recall"] = m.recall;
        o["f1"] = m.f1;
        o["precision_percent"] = as_percent(m.precision);
        o["recall_percent"] = as_percent(m.recall);
        o["f1_percent"] = as_percent(m.f1);
        return o;
    };
    j["weighted"] = avg(report.weighted);
    j["macro"] = avg(report.macro);
    nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < class_names.size(); ++k) {
        const auto& m = report.per_class[k];
        per_class[class_names[k]] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
    }
    j["per_class"] = per_class;
    return j.dump(2) + "\n";
}

}  // namespace crisisfuse
