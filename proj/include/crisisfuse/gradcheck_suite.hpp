#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crisisfuse/gradcheck.hpp"

namespace crisisfuse {

struct GradCheckCase {
    std::string name;
    bool smooth = false;
    GradCheckReport report;
    double seconds = 0.0;
};

/// Every op plus the text CNN, scaled VGG and fusion graphs at toy sizes,
/// with fixed seeds. Smooth ops are held to 1e-5, the rest to 1e-4.
std::vector<GradCheckCase> run_gradcheck_suite(const std::function<void(const GradCheckCase&)>& on_case = {});

/// One line per case: name, tolerance, worst relative error, PASS/FAIL.
std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases);

bool all_passed(const std::vector<GradCheckCase>& cases);

}  // namespace crisisfuse
