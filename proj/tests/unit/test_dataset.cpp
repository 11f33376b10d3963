#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crisisfuse/dataset.hpp"
#include "crisisfuse/errors.hpp"
#include "../support/synthetic.hpp"

using namespace crisisfuse;
using crisisfuse::testing::agreed_record;

namespace {

const char* kHeader = "tweet_id\timage_id\tevent_name\ttweet_text\timage_path\tlabel_text\tlabel_image\n";

std::vector<TweetRecord> parse(const std::string& body, Task task = Task::humanitarian)
{
    std::istringstream in(body);
    return parse_annotations(in, task, "mem.tsv");
}

std::set<std::string> ids(const std::vector<TweetRecord>& records)
{
    std::set<std::string> out;
    for (const auto& r : records) out.insert(r.tweet_id);
    return out;
}

}  // namespace

TEST_SUITE("dataset")
{
    TEST_CASE("well-formed file parses one record per row")
    {
        const auto r = parse(std::string(kHeader) +
                             "1\t1_0\tharvey\tHelp!\timages/a.jpg\tinjured_or_dead_people\tinjured_or_dead_people\n"
                             "2\t2_0\tharvey\tRoads out\timages/b.jpg\tvehicle_damage\tnot_humanitarian\n"
                             "3\t3_0\tirma\tnice day\timages/c.jpg\tnot_humanitarian\tnot_humanitarian\n");
        REQUIRE(r.size() == 3);
        CHECK(r[0].text_label == "injured_or_dead_people");
        CHECK(r[1].image_label == "not_humanitarian");
        CHECK(r[2].event_name == "irma");
    }

    TEST_CASE("ingest errors carry the line number")
    {
        try {
            parse(std::string(kHeader) + "1\t1_0\tharvey\tx\timages/a.jpg\tnot_humanitarian\tnot_humanitarian\n"
                                         "2\t2_0\tharvey\tx\t\tnot_humanitarian\tnot_humanitarian\n");
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("mem.tsv:3") != std::string::npos);
        }
        try {
            parse(std::string(kHeader) + "1\t1_0\tharvey\tx\ti.jpg\tflood_damage\tnot_humanitarian\n");
            FAIL("expected LabelError");
        } catch (const LabelError& e) {
            CHECK(std::string(e.what()).find("mem.tsv:2") != std::string::npos);
        }
        CHECK_THROWS_AS(parse("tweet_id\timage_id\ttweet_text\n1\t2\tx\n"), SchemaError);
        CHECK_THROWS_AS(parse(std::string(kHeader) + "1\t1_0\te\tx\ti.jpg\tnot_humanitarian\tnot_humanitarian\n"
                                                     "1\t1_0\te\tx\ti.jpg\tnot_humanitarian\tnot_humanitarian\n"),
                        DuplicateError);
        CHECK_THROWS_AS(parse(std::string(kHeader) + "1\t1_0\te\tx\ti.jpg\tinformative\tinformative\n"), LabelError);
    }

    TEST_CASE("raw release columns map onto the canonical schema")
    {
        const std::string raw =
            "tweet_id\timage_id\ttext_info\timage_info\ttext_human\timage_human\ttweet_text\timage_path\n"
            "5\t5_0\tinformative\tinformative\tvehicle_damage\tvehicle_damage\tcar flipped\tdata/5.jpg\n";
        std::istringstream a(raw), b(raw);
        const auto info = parse_annotations(a, Task::informative, "raw.tsv", "harvey");
        CHECK(info[0].text_label == "informative");
        CHECK(info[0].event_name == "harvey");
        const auto hum = parse_annotations(b, Task::humanitarian, "raw.tsv", "harvey");
        CHECK(hum[0].text_label == "vehicle_damage");
        std::istringstream c(raw);
        CHECK_THROWS_AS(parse_annotations(c, Task::informative, "raw.tsv"), SchemaError);
    }

    TEST_CASE("a directory of per-event files is read in name order")
    {
        const auto dir = crisisfuse::testing::scratch_dir("event_dir");
        const std::string header = "tweet_id\timage_id\ttext_info\timage_info\ttweet_text\timage_path\n";
        {
            std::ofstream(dir / "b_event_final_data.tsv") << header << "2\t2_0\tinformative\tinformative\tx\tb.jpg\n";
            std::ofstream(dir / "a_event_final_data.tsv") << header << "1\t1_0\tinformative\tinformative\ty\ta.jpg\n";
            std::ofstream(dir / "notes.txt") << "ignored\n";
        }
        const auto r = parse_annotations(dir, Task::informative);
        REQUIRE(r.size() == 2);
        CHECK(r[0].event_name == "a_event");
        CHECK(r[1].event_name == "b_event");
        std::ofstream(dir / "c_final_data.tsv") << header << "1\t1_0\tinformative\tinformative\ty\ta.jpg\n";
        CHECK_THROWS_AS(parse_annotations(dir, Task::informative), DuplicateError);
        std::filesystem::remove_all(dir);
        CHECK_THROWS_AS(parse_annotations(dir / "nothing.tsv", Task::informative), InputError);
    }

    TEST_CASE("agreement filter")
    {
        std::vector<TweetRecord> rows(3);
        rows[0].text_label = rows[0].image_label = "informative";
        rows[1].text_label = "informative";
        rows[1].image_label = "not_informative";
        rows[2].text_label = rows[2].image_label = "dont_know_or_cant_judge";
        const auto kept = filter_agreement(rows, Task::informative);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].label == "informative");
        CHECK(filter_agreement({}, Task::informative).empty());
    }

    TEST_CASE("category merge")
    {
        CHECK(merge_label("missing_or_found_people") == "affected_individuals");
        CHECK(merge_label("injured_or_dead_people") == "affected_individuals");
        CHECK(merge_label("vehicle_damage") == "infrastructure_and_utility_damage");
        CHECK(merge_label("not_humanitarian") == "not_humanitarian");
        CHECK_THROWS_AS(merge_label("flood"), LabelError);
        std::vector<TweetRecord> rows{agreed_record("1", "1_0", "vehicle_damage")};
        CHECK(merge_categories(rows)[0].label == "infrastructure_and_utility_damage");
    }

    TEST_CASE("multi-image tweets stay in train")
    {
        std::vector<TweetRecord> rows;
        for (int i = 0; i < 3; ++i) rows.push_back(agreed_record("multi", "multi_" + std::to_string(i), "informative"));
        for (int t = 0; t < 40; ++t) rows.push_back(agreed_record("t" + std::to_string(t), "img", "informative"));
        const auto s = make_splits(rows, Task::informative, 1);
        std::size_t in_train = 0;
        for (const auto& r : s.train) in_train += r.tweet_id == "multi";
        CHECK(in_train == 3);
        CHECK(ids(s.dev).count("multi") == 0);
        CHECK(ids(s.test).count("multi") == 0);
        // 41 unique tweets: floor(0.15 * 41) = 6
        CHECK(s.dev.size() == 6);
        CHECK(s.test.size() == 6);
        CHECK(s.manifest.counts.at("informative").train_text == 29);
        CHECK(s.manifest.counts.at("informative").train_image == 31);
    }

    TEST_CASE("1000 single-image tweets split 700/150/150")
    {
        std::vector<TweetRecord> rows;
        for (int t = 0; t < 1000; ++t) rows.push_back(agreed_record(std::to_string(t), "i", "not_informative"));
        const auto s = make_splits(rows, Task::informative, 7);
        CHECK(s.train.size() == 700);
        CHECK(s.dev.size() == 150);
        CHECK(s.test.size() == 150);
        CHECK(s.warnings.empty());  // an empty class is not a warning

        const auto again = make_splits(rows, Task::informative, 7);
        CHECK(ids(again.dev) == ids(s.dev));
        CHECK(ids(again.test) == ids(s.test));
        std::set<std::string> all = ids(s.dev);
        for (const auto* part : {&s.test, &s.train}) {
            for (const auto& r : *part) all.insert(r.tweet_id);
        }
        CHECK(all.size() == 1000);
    }

    TEST_CASE("small classes go entirely to train with a warning")
    {
        std::vector<TweetRecord> rows{agreed_record("a", "a0", "informative"), agreed_record("b", "b0", "informative")};
        for (int t = 0; t < 20; ++t) rows.push_back(agreed_record("n" + std::to_string(t), "i", "not_informative"));
        const auto s = make_splits(rows, Task::informative, 3);
        CHECK(s.manifest.counts.at("informative").dev == 0);
        CHECK(s.manifest.counts.at("informative").train_text == 2);
        CHECK(s.manifest.counts.at("not_informative").dev == 3);
        REQUIRE(!s.warnings.empty());
        CHECK(s.warnings.front().find("informative") != std::string::npos);
    }

    TEST_CASE("manifest, split files and count table")
    {
        std::vector<TweetRecord> rows;
        for (int t = 0; t < 30; ++t) {
            rows.push_back(agreed_record("h" + std::to_string(t), "i", t % 2 ? "not_humanitarian" : "affected_individuals"));
        }
        rows[4].tweet_text = "tab\tinside";
        const auto s = make_splits(rows, Task::humanitarian, 11, {}, 17);
        const auto back = SplitManifest::from_json(s.manifest.to_json());
        CHECK(back.seed == 11);
        CHECK(back.max_len == 17);
        CHECK(back.classes == TaskSchema::get(Task::humanitarian).classes);
        CHECK(back.counts.at("affected_individuals").dev == s.manifest.counts.at("affected_individuals").dev);
        CHECK(nlohmann::json::parse(s.manifest.to_json())["task"] == "humanitarian");

        const auto dir = crisisfuse::testing::scratch_dir("splits");
        write_splits(dir, s);
        for (const char* f : {"train.tsv", "dev.tsv", "test.tsv", "manifest.json"}) {
            CHECK(std::filesystem::exists(dir / f));
        }
        const auto train = read_split_tsv(dir / "train.tsv", Task::humanitarian);
        REQUIRE(train.size() == s.train.size());
        CHECK(train[0].label == s.train[0].label);
        CHECK(train[0].tweet_id == s.train[0].tweet_id);
        std::filesystem::remove_all(dir);

        const auto table = format_count_table(s.manifest);
        CHECK(table.find("affected_individuals") != std::string::npos);
        CHECK(table.find("total") != std::string::npos);
        CHECK(table.find("30") != std::string::npos);
    }

    TEST_CASE("schema order and parsing")
    {
        CHECK(TaskSchema::get(Task::informative).classes == std::vector<std::string>{"informative", "not_informative"});
        const auto& h = TaskSchema::get(Task::humanitarian);
        CHECK(h.classes.size() == 5);
        CHECK(h.index("rescue_volunteering_or_donation_effort") == 1);
        CHECK(h.index("vehicle_damage") == -1);
        CHECK(parse_task("informativeness") == Task::informative);
        CHECK_THROWS_AS(parse_task("damage"), ConfigError);
    }

    TEST_CASE("bundled fixture matches its independently derived counts")
    {
        const std::filesystem::path fixture = CRISISFUSE_FIXTURE_DIR;
        const auto golden = nlohmann::json::parse(crisisfuse::testing::slurp(fixture / "expected_counts.json"));
        for (const Task task : {Task::informative, Task::humanitarian}) {
            const auto records = parse_annotations(fixture / "annotations.tsv", task);
            CHECK(records.size() == 68);
            const auto s = curate(records, task, 42);
            const auto& expected = golden.at(to_string(task));
            for (const auto& cls : TaskSchema::get(task).classes) {
                const auto& got = s.manifest.counts.at(cls);
                const auto& want = expected.at(cls);
                INFO(to_string(task) << "/" << cls);
                CHECK(got.train_text == want.at("train_text").get<std::size_t>());
                CHECK(got.train_image == want.at("train_image").get<std::size_t>());
                CHECK(got.dev == want.at("dev").get<std::size_t>());
                CHECK(got.test == want.at("test").get<std::size_t>());
            }
        }
    }
}
