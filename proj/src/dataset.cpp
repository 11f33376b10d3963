#include "crisisfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "crisisfuse/errors.hpp"
#include "crisisfuse/rng.hpp"

namespace crisisfuse {

namespace {

const std::vector<std::string> kRequiredColumns = {"tweet_id",   "image_id",   "event_name", "tweet_text",
                                                   "image_path", "label_text", "label_image"};

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r') cells.back().pop_back();
    return cells;
}

std::string clean_cell(std::string s)
{
    for (char& c : s) {
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

bool contains(const std::vector<std::string>& list, std::string_view value)
{
    return std::find(list.begin(), list.end(), value) != list.end();
}

// floor(ratio * n) without 0.15 * 20 landing on 2.9999...
std::size_t floor_share(double ratio, std::size_t n)
{
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

}  // namespace

std::string to_string(Task task) { return task == Task::informative ? "informative" : "humanitarian"; }

Task parse_task(std::string_view name)
{
    if (name == "informative" || name == "informativeness") return Task::informative;
    if (name == "humanitarian") return Task::humanitarian;
    throw ConfigError("unknown task '" + std::string(name) + "' (expected informative or humanitarian)");
}

const TaskSchema& TaskSchema::get(Task task)
{
    static const TaskSchema informative{Task::informative, "informative-v1", {"informative", "not_informative"}};
    static const TaskSchema humanitarian{Task::humanitarian,
                                         "humanitarian-v1",
                                         {"affected_individuals", "rescue_volunteering_or_donation_effort",
                                          "infrastructure_and_utility_damage", "other_relevant_information",
                                          "not_humanitarian"}};
    return task == Task::informative ? informative : humanitarian;
}

int TaskSchema::index(std::string_view label) const
{
    const auto it = std::find(classes.begin(), classes.end(), label);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

const std::vector<std::string>& raw_labels(Task task)
{
    static const std::vector<std::string> informative = {"informative", "not_informative", "dont_know_or_cant_judge"};
    static const std::vector<std::string> humanitarian = {
        "affected_individuals",       "infrastructure_and_utility_damage",
        "injured_or_dead_people",     "missing_or_found_people",
        "not_humanitarian",           "other_relevant_information",
        "rescue_volunteering_or_donation_effort", "vehicle_damage",
        "dont_know_or_cant_judge"};
    return task == Task::informative ? informative : humanitarian;
}

std::vector<TweetRecord> parse_annotations(std::istream& in, Task task, const std::string& source,
                                           std::string_view default_event)
{
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(source + ": empty file, header row expected");
    const auto header = split_tabs(line);
    std::unordered_map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);

    // raw release names for the per-task label columns
    const std::string raw_text = task == Task::informative ? "text_info" : "text_human";
    const std::string raw_image = task == Task::informative ? "image_info" : "image_human";
    if (!column.count("label_text") && column.count(raw_text)) column["label_text"] = column[raw_text];
    if (!column.count("label_image") && column.count(raw_image)) column["label_image"] = column[raw_image];
    if (!column.count("event_name") && column.count("event")) column["event_name"] = column["event"];
    const bool event_from_source = !column.count("event_name") && !default_event.empty();
    if (event_from_source) column["event_name"] = header.size();  // past the last cell, filled below

    for (const auto& name : kRequiredColumns) {
        if (!column.count(name)) throw SchemaError(source + ": missing required column '" + name + "'");
    }

    const auto& vocab = raw_labels(task);
    std::vector<TweetRecord> records;
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_tabs(line);
        const auto cell = [&](const std::string& name) -> std::string {
            const auto idx = column.at(name);
            return idx < cells.size() ? cells[idx] : std::string();
        };
        const std::string where = source + ":" + std::to_string(line_no);
        TweetRecord r{cell("tweet_id"),   cell("image_id"),   cell("event_name"), cell("tweet_text"),
                      cell("image_path"), cell("label_text"), cell("label_image"), {}};
        if (event_from_source) r.event_name = std::string(default_event);
        if (r.tweet_id.empty()) throw SchemaError(where + ": empty tweet_id");
        if (r.image_path.empty()) throw SchemaError(where + ": missing image_path");
        for (const auto* label : {&r.text_label, &r.image_label}) {
            if (!contains(vocab, *label)) {
                throw LabelError(where + ": unknown " + to_string(task) + " label '" + *label + "'");
            }
        }
        if (!seen.emplace(r.tweet_id, r.image_id).second) {
            throw DuplicateError(where + ": duplicate tweet_id/image_id " + r.tweet_id + "/" + r.image_id);
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<TweetRecord> parse_annotations(const std::filesystem::path& path, Task task)
{
    if (!std::filesystem::is_directory(path)) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot open annotations file " + path.string());
        return parse_annotations(in, task, path.string());
    }
    // Release layout: one file per event, named <event>_final_data.tsv.
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
        if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
    }
    if (files.empty()) throw InputError("no .tsv annotation files in " + path.string());
    std::sort(files.begin(), files.end());
    std::vector<TweetRecord> all;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& file : files) {
        std::string event = file.stem().string();
        constexpr std::string_view suffix = "_final_data";
        if (event.size() > suffix.size() && event.ends_with(suffix)) event.resize(event.size() - suffix.size());
        std::ifstream in(file);
        if (!in) throw InputError("cannot open annotations file " + file.string());
        for (auto& r : parse_annotations(in, task, file.string(), event)) {
            if (!seen.emplace(r.tweet_id, r.image_id).second) {
                throw DuplicateError(file.string() + ": tweet_id/image_id " + r.tweet_id + "/" + r.image_id +
                                     " repeats an earlier file");
            }
            all.push_back(std::move(r));
        }
    }
    return all;
}

std::vector<TweetRecord> filter_agreement(const std::vector<TweetRecord>& records, Task task)
{
    const auto& vocab = raw_labels(task);
    std::vector<TweetRecord> kept;
    for (const auto& r : records) {
        if (r.text_label != r.image_label) continue;
        if (r.text_label == "dont_know_or_cant_judge" || !contains(vocab, r.text_label)) continue;
        TweetRecord k = r;
        k.label = r.text_label;
        kept.push_back(std::move(k));
    }
    return kept;
}

std::string merge_label(std::string_view label)
{
    if (label == "injured_or_dead_people" || label == "missing_or_found_people") return "affected_individuals";
    if (label == "vehicle_damage") return "infrastructure_and_utility_damage";
    const auto& schema = TaskSchema::get(Task::humanitarian);
    if (schema.index(label) < 0) throw LabelError("cannot merge unknown humanitarian label '" + std::string(label) + "'");
    return std::string(label);
}

std::vector<TweetRecord> merge_categories(const std::vector<TweetRecord>& records)
{
    std::vector<TweetRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        TweetRecord m = r;
        m.label = merge_label(r.label.empty() ? r.text_label : r.label);
        m.text_label = merge_label(r.text_label);
        m.image_label = merge_label(r.image_label);
        out.push_back(std::move(m));
    }
    return out;
}

DatasetSplits make_splits(const std::vector<TweetRecord>& records, Task task, std::uint64_t seed,
                          const SplitRatios& ratios, std::size_t max_len)
{
    for (const double r : {ratios.train, ratios.dev, ratios.test}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("split ratios must lie in [0,1]");
    }
    if (std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
        throw ParameterError("split ratios must sum to 1");
    }
    const auto& schema = TaskSchema::get(task);

    std::map<std::string, std::vector<const TweetRecord*>> groups;
    for (const auto& r : records) {
        if (schema.index(r.label) < 0) {
            throw LabelError("record " + r.tweet_id + "/" + r.image_id + " has label '" + r.label +
                             "' outside the " + to_string(task) + " schema");
        }
        groups[r.tweet_id].push_back(&r);
    }

    DatasetSplits out;
    out.manifest.task = task;
    out.manifest.seed = seed;
    out.manifest.ratios = ratios;
    out.manifest.max_len = max_len;
    out.manifest.classes = schema.classes;

    std::vector<std::vector<std::string>> single(schema.classes.size());
    std::vector<std::size_t> unique(schema.classes.size(), 0);
    std::set<std::string> to_train;
    for (const auto& [id, members] : groups) {
        const auto cls = static_cast<std::size_t>(schema.index(members.front()->label));
        ++unique[cls];
        if (members.size() > 1) {
            to_train.insert(id);
        } else {
            single[cls].push_back(id);
        }
    }

    std::set<std::string> dev_ids, test_ids;
    const Rng base(seed);
    for (std::size_t c = 0; c < schema.classes.size(); ++c) {
        auto& ids = single[c];
        const auto& name = schema.classes[c];
        if (ids.size() < 3) {
            if (unique[c] > 0) {
                out.warnings.push_back("class " + name + " has " + std::to_string(ids.size()) +
                                       " single-image tweets; all assigned to train");
            }
            continue;
        }
        Rng rng = base.fork(c);
        rng.shuffle(ids.begin(), ids.end());
        std::size_t n_dev = floor_share(ratios.dev, unique[c]);
        std::size_t n_test = floor_share(ratios.test, unique[c]);
        if (n_dev + n_test > ids.size()) {
            out.warnings.push_back("class " + name + " has too few single-image tweets for its dev/test share");
            n_dev = std::min(n_dev, ids.size() / 2);
            n_test = std::min(n_test, ids.size() - n_dev);
        }
        dev_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_dev));
        test_ids.insert(ids.begin() + static_cast<std::ptrdiff_t>(n_dev),
                        ids.begin() + static_cast<std::ptrdiff_t>(n_dev + n_test));
    }

    for (const auto& name : schema.classes) out.manifest.counts[name] = {};
    std::set<std::string> train_tweets;
    for (const auto& [id, members] : groups) {
        auto& counts = out.manifest.counts[members.front()->label];
        if (dev_ids.count(id)) {
            out.dev.push_back(*members.front());
            ++counts.dev;
        } else if (test_ids.count(id)) {
            out.test.push_back(*members.front());
            ++counts.test;
        } else {
            auto sorted = members;
            std::sort(sorted.begin(), sorted.end(),
                      [](const TweetRecord* a, const TweetRecord* b) { return a->image_id < b->image_id; });
            for (const auto* r : sorted) out.train.push_back(*r);
            ++counts.train_text;
            counts.train_image += members.size();
        }
    }
    return out;
}

DatasetSplits curate(const std::vector<TweetRecord>& records, Task task, std::uint64_t seed,
                     const SplitRatios& ratios, std::size_t max_len)
{
    auto kept = filter_agreement(records, task);
    if (task == Task::humanitarian) kept = merge_categories(kept);
    return make_splits(kept, task, seed, ratios, max_len);
}

void write_split_tsv(std::ostream& out, const std::vector<TweetRecord>& records)
{
    for (std::size_t i = 0; i < kRequiredColumns.size(); ++i) out << (i ? "\t" : "") << kRequiredColumns[i];
    out << '\n';
    for (const auto& r : records) {
        out << clean_cell(r.tweet_id) << '\t' << clean_cell(r.image_id) << '\t' << clean_cell(r.event_name) << '\t'
            << clean_cell(r.tweet_text) << '\t' << clean_cell(r.image_path) << '\t' << clean_cell(r.label) << '\t'
            << clean_cell(r.label) << '\n';
    }
}

std::vector<TweetRecord> read_split_tsv(const std::filesystem::path& path, Task task)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open split file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file, header row expected");
    const auto header = split_tabs(line);
    for (const auto& name : kRequiredColumns) {
        if (!contains(header, name)) throw SchemaError(path.string() + ": missing required column '" + name + "'");
    }
    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    const auto& schema = TaskSchema::get(task);
    std::vector<TweetRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        cells.resize(std::max(cells.size(), header.size()));
        TweetRecord r{cells[col("tweet_id")],   cells[col("image_id")],   cells[col("event_name")],
                      cells[col("tweet_text")], cells[col("image_path")], cells[col("label_text")],
                      cells[col("label_image")], cells[col("label_text")]};
        if (schema.index(r.label) < 0) {
            throw LabelError(path.string() + ":" + std::to_string(line_no) + ": label '" + r.label +
                             "' outside the " + to_string(task) + " schema");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_splits(const std::filesystem::path& dir, const DatasetSplits& splits)
{
    std::filesystem::create_directories(dir);
    const auto write = [&](const std::string& name, const auto& body) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw InputError("cannot write " + (dir / name).string());
        body(out);
        if (!out) throw InputError("failed writing " + (dir / name).string());
    };
    write("train.tsv", [&](std::ostream& o) { write_split_tsv(o, splits.train); });
    write("dev.tsv", [&](std::ostream& o) { write_split_tsv(o, splits.dev); });
    write("test.tsv", [&](std::ostream& o) { write_split_tsv(o, splits.test); });
    write("manifest.json", [&](std::ostream& o) { o << splits.manifest.to_json(); });
}

std::string SplitManifest::to_json() const
{
    nlohmann::ordered_json j;
    j["task"] = to_string(task);
    j["schema_version"] = TaskSchema::get(task).version;
    j["seed"] = seed;
    j["ratios"] = {{"train", ratios.train}, {"dev", ratios.dev}, {"test", ratios.test}};
    j["max_len"] = max_len;
    j["classes"] = classes;
    nlohmann::ordered_json c = nlohmann::ordered_json::object();
    for (const auto& name : classes) {
        const auto it = counts.find(name);
        const ClassCounts k = it == counts.end() ? ClassCounts{} : it->second;
        c[name] = {{"train_text", k.train_text}, {"train_image", k.train_image}, {"dev", k.dev}, {"test", k.test}};
    }
    j["counts"] = c;
    return j.dump(2) + "\n";
}

SplitManifest SplitManifest::from_json(std::string_view text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        SplitManifest m;
        m.task = parse_task(j.at("task").get<std::string>());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.ratios = {j.at("ratios").at("train").get<double>(), j.at("ratios").at("dev").get<double>(),
                    j.at("ratios").at("test").get<double>()};
        m.max_len = j.at("max_len").get<std::size_t>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        for (const auto& [name, k] : j.at("counts").items()) {
            m.counts[name] = {k.at("train_text").get<std::size_t>(), k.at("train_image").get<std::size_t>(),
                              k.at("dev").get<std::size_t>(), k.at("test").get<std::size_t>()};
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

std::string format_count_table(const SplitManifest& manifest)
{
    std::size_t name_w = 5;
    for (const auto& c : manifest.classes) name_w = std::max(name_w, c.size());
    std::ostringstream out;
    const auto row = [&](const std::string& name, const ClassCounts& k) {
        out << std::left << std::setw(static_cast<int>(name_w)) << name << std::right << std::setw(8) << k.train_text
            << std::setw(8) << k.train_image << std::setw(8) << k.dev << std::setw(8) << k.test << std::setw(8)
            << k.total_text() << std::setw(8) << k.total_image() << '\n';
    };
    out << std::left << std::setw(static_cast<int>(name_w)) << "" << std::right << std::setw(16) << "train"
        << std::setw(8) << "dev" << std::setw(8) << "test" << std::setw(16) << "total" << '\n';
    out << std::left << std::setw(static_cast<int>(name_w)) << "class" << std::right << std::setw(8) << "text"
        << std::setw(8) << "image" << std::setw(8) << "" << std::setw(8) << "" << std::setw(8) << "text"
        << std::setw(8) << "image" << '\n';
    ClassCounts total;
    for (const auto& name : manifest.classes) {
        const auto it = manifest.counts.find(name);
        const ClassCounts k = it == manifest.counts.end() ? ClassCounts{} : it->second;
        row(name, k);
        total.train_text += k.train_text;
        total.train_image += k.train_image;
        total.dev += k.dev;
        total.test += k.test;
    }
    row("total", total);
    return out.str();
}

}  // namespace crisisfuse
