#include <doctest.h>

#include <array>
#include <numeric>

#include <nlohmann/json.hpp>

#include "crisisfuse/evaluation.hpp"
#include "crisisfuse/rng.hpp"

using namespace crisisfuse;

namespace {

// Straight from the definitions, one class at a time.
struct Oracle {
    double accuracy, precision, recall, f1, macro_f1;
};

Oracle oracle(const std::vector<std::vector<std::uint64_t>>& m)
{
    const std::size_t k = m.size();
    double total = 0, correct = 0, p = 0, r = 0, f = 0, macro = 0;
    for (std::size_t c = 0; c < k; ++c) {
        double row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += double(m[c][j]);
            col += double(m[j][c]);
        }
        total += row;
        correct += double(m[c][c]);
        const double pc = col > 0 ? double(m[c][c]) / col : 0.0;
        const double rc = row > 0 ? double(m[c][c]) / row : 0.0;
        const double fc = pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0.0;
        p += row * pc;
        r += row * rc;
        f += row * fc;
        macro += fc;
    }
    return {correct / total, p / total, r / total, f / total, macro / double(k)};
}

void check_against_oracle(const ConfusionMatrix& cm)
{
    const auto o = oracle(cm.counts());
    const auto rep = classification_report(cm);
    CHECK(rep.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
    CHECK(rep.weighted.precision == doctest::Approx(o.precision).epsilon(1e-12));
    CHECK(rep.weighted.recall == doctest::Approx(o.recall).epsilon(1e-12));
    CHECK(rep.weighted.f1 == doctest::Approx(o.f1).epsilon(1e-12));
    CHECK(rep.macro.f1 == doctest::Approx(o.macro_f1).epsilon(1e-12));
}

}  // namespace

TEST_SUITE("evaluation")
{
    TEST_CASE("perfect predictions score 100")
    {
        ConfusionMatrix cm({{7, 0, 0}, {0, 3, 0}, {0, 0, 11}});
        const auto rep = classification_report(cm);
        CHECK(as_percent(rep.accuracy) == 100.0);
        CHECK(as_percent(rep.weighted.precision) == 100.0);
        CHECK(as_percent(rep.weighted.f1) == 100.0);
        CHECK(as_percent(rep.macro.recall) == 100.0);
    }

    TEST_CASE("constant majority predictor on a 60/40 split")
    {
        std::vector<int> gold(100, 0), pred(100, 0);
        std::fill(gold.begin() + 60, gold.end(), 1);
        const auto rep = classification_report(confusion_matrix(gold, pred, 2));
        CHECK(as_percent(rep.accuracy) == 60.0);
        CHECK(as_percent(rep.weighted.f1) == 45.0);
        CHECK(as_percent(rep.weighted.precision) == 36.0);
        CHECK(rep.per_class[1].precision == 0.0);
        CHECK(rep.per_class[1].support == 40);
    }

    TEST_CASE("confusion matrix recounts the pairs")
    {
        Rng rng(3);
        std::vector<int> gold(50), pred(50);
        std::array<std::array<int, 3>, 3> expected{};
        for (std::size_t i = 0; i < 50; ++i) {
            gold[i] = static_cast<int>(rng.below(3));
            pred[i] = static_cast<int>(rng.below(3));
            ++expected[gold[i]][pred[i]];
        }
        const auto cm = confusion_matrix(gold, pred, 3);
        CHECK(cm.total() == 50);
        for (std::size_t g = 0; g < 3; ++g) {
            for (std::size_t p = 0; p < 3; ++p) CHECK(cm.at(g, p) == std::uint64_t(expected[g][p]));
        }
        check_against_oracle(cm);
    }

    TEST_CASE("bad inputs")
    {
        const std::vector<int> gold{0, 1, 2}, pred{0, 5, 1};
        try {
            confusion_matrix(gold, pred, 3);
            FAIL("expected LabelError");
        } catch (const LabelError& e) {
            CHECK(std::string(e.what()).find("index 1") != std::string::npos);
        }
        const std::vector<int> shorter{0, 1};
        CHECK_THROWS_AS(confusion_matrix(gold, shorter, 3), DimensionError);
        CHECK_THROWS_AS(classification_report(ConfusionMatrix(4)), InputError);
    }

    TEST_CASE("relabelling classes leaves weighted scores unchanged")
    {
        const ConfusionMatrix cm({{50, 3, 9}, {4, 21, 2}, {11, 0, 30}});
        const std::array<std::size_t, 3> order{2, 0, 1};
        const auto a = classification_report(cm);
        const auto b = classification_report(cm.permuted(order));
        CHECK(b.accuracy == doctest::Approx(a.accuracy));
        CHECK(b.weighted.precision == doctest::Approx(a.weighted.precision));
        CHECK(b.weighted.f1 == doctest::Approx(a.weighted.f1));
        CHECK(b.macro.f1 == doctest::Approx(a.macro.f1));
        CHECK(cm.permuted(order).at(0, 1) == cm.at(2, 0));
    }

    TEST_CASE("weighted recall equals accuracy")
    {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::vector<std::uint64_t>> m(4, std::vector<std::uint64_t>(4));
            for (auto& row : m) {
                for (auto& v : row) v = rng.below(30);
            }
            m[0][0] += 1;
            const ConfusionMatrix cm(m);
            const auto rep = classification_report(cm);
            CHECK(rep.weighted.recall == doctest::Approx(rep.accuracy).epsilon(1e-12));
            check_against_oracle(cm);
        }
    }

    TEST_CASE("rendered matrix round-trips and states its orientation")
    {
        const ConfusionMatrix cm({{875, 155}, {139, 365}});
        const std::vector<std::string> names{"informative", "not_informative"};
        const auto text = render_confusion_matrix(cm, names);
        CHECK(text.find("rows: human (gold) labels; columns: predicted labels") != std::string::npos);
        std::vector<std::string> back_names;
        const auto back = parse_confusion_matrix(text, &back_names);
        CHECK(back.counts() == cm.counts());
        CHECK(back_names == names);
        CHECK_THROWS_AS(render_confusion_matrix(cm, {"one"}), DimensionError);
    }

    TEST_CASE("JSON report carries accuracy, averaged rows and per-class entries")
    {
        const ConfusionMatrix cm({{875, 155}, {139, 365}});
        const auto j = nlohmann::json::parse(report_to_json(classification_report(cm), {"informative", "not_informative"}));
        for (const char* key : {"accuracy", "weighted", "macro", "per_class", "total"}) CHECK(j.contains(key));
        CHECK(j["total"] == 1534);
        CHECK(j["per_class"]["not_informative"]["support"] == 504);
        CHECK(j["weighted"].contains("f1_percent"));
    }

    TEST_CASE("published text-only informativeness matrix")
    {
        const ConfusionMatrix cm({{875, 155}, {139, 365}});
        const auto rep = classification_report(cm);
        CHECK(as_percent(rep.accuracy) == 80.8);
        CHECK(as_percent(rep.weighted.precision) == 81.0);
        CHECK(as_percent(rep.weighted.f1) == 80.9);
        check_against_oracle(cm);
    }

    TEST_CASE("percent rounding")
    {
        CHECK(as_percent(0.80834) == 80.8);
        CHECK(as_percent(0.80851) == 80.9);
        CHECK(as_percent(1.0) == 100.0);
    }
}
