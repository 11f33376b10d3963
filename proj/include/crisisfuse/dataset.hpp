#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace crisisfuse {

enum class Task { informative, humanitarian };

std::string to_string(Task task);
Task parse_task(std::string_view name);

/// Closed, ordered class list for a task. Confusion-matrix axes follow it.
struct TaskSchema {
    Task task = Task::informative;
    std::string version;
    std::vector<std::string> classes;

    static const TaskSchema& get(Task task);
    /// Index of a post-merge class name, or -1.
    int index(std::string_view label) const;
};

/// Labels accepted on ingest, before agreement filtering and merging.
const std::vector<std::string>& raw_labels(Task task);

struct TweetRecord {
    std::string tweet_id;
    std::string image_id;
    std::string event_name;
    std::string tweet_text;
    std::string image_path;
    std::string text_label;
    std::string image_label;
    /// Agreed label once filter_agreement has run.
    std::string label;
};

/// Reads a tab-separated annotation file. Raw CrisisMMD column names
/// (text_info/image_info, text_human/image_human) are mapped onto
/// label_text/label_image for the given task. Files without an event column
/// take `default_event` when one is given.
std::vector<TweetRecord> parse_annotations(std::istream& in, Task task, const std::string& source = "<input>",
                                           std::string_view default_event = {});
/// A file, or a directory of per-event .tsv files read in name order.
std::vector<TweetRecord> parse_annotations(const std::filesystem::path& path, Task task);

/// Keeps rows whose text and image labels coincide and belong to the task.
std::vector<TweetRecord> filter_agreement(const std::vector<TweetRecord>& records, Task task);

/// Humanitarian merge: people categories into affected_individuals,
/// vehicle_damage into infrastructure_and_utility_damage.
std::string merge_label(std::string_view label);
std::vector<TweetRecord> merge_categories(const std::vector<TweetRecord>& records);

struct SplitRatios {
    double train = 0.70;
    double dev = 0.15;
    double test = 0.15;
};

struct ClassCounts {
    std::size_t train_text = 0;
    std::size_t train_image = 0;
    std::size_t dev = 0;
    std::size_t test = 0;

    std::size_t total_text() const { return train_text + dev + test; }
    std::size_t total_image() const { return train_image + dev + test; }
};

struct SplitManifest {
    Task task = Task::informative;
    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::size_t max_len = 25;
    std::vector<std::string> classes;
    std::map<std::string, ClassCounts> counts;

    std::string to_json() const;
    static SplitManifest from_json(std::string_view text);
};

struct DatasetSplits {
    std::vector<TweetRecord> train;
    std::vector<TweetRecord> dev;
    std::vector<TweetRecord> test;
    SplitManifest manifest;
    std::vector<std::string> warnings;
};

/// Multi-image tweets go to train. Per class, floor(dev_ratio * unique tweets)
/// single-image tweets go to dev, the same number of test ratio to test, the
/// rest to train. Records must carry an agreed label.
DatasetSplits make_splits(const std::vector<TweetRecord>& records, Task task, std::uint64_t seed,
                          const SplitRatios& ratios = {}, std::size_t max_len = 25);

/// Curation end to end: filter, merge (humanitarian), split.
DatasetSplits curate(const std::vector<TweetRecord>& records, Task task, std::uint64_t seed,
                     const SplitRatios& ratios = {}, std::size_t max_len = 25);

void write_split_tsv(std::ostream& out, const std::vector<TweetRecord>& records);
std::vector<TweetRecord> read_split_tsv(const std::filesystem::path& path, Task task);

/// Writes train.tsv, dev.tsv, test.tsv and manifest.json into dir.
void write_splits(const std::filesystem::path& dir, const DatasetSplits& splits);

/// Per-class count table: train text/image, dev, test, total text/image.
std::string format_count_table(const SplitManifest& manifest);

}  // namespace crisisfuse
