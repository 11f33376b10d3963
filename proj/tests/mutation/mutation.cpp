// Linked against a library whose relu backward has the wrong sign. Succeeds
// only when the gradient checks catch it.
#include <iostream>

#include "crisisfuse/gradcheck_suite.hpp"

int main()
{
    const auto cases = crisisfuse::run_gradcheck_suite();
    std::cout << crisisfuse::format_gradcheck_table(cases);
    bool relu_caught = false, chain_caught = false;
    for (const auto& c : cases) {
        if (c.name == "relu") relu_caught = !c.report.passed();
        if (c.name == "dense_relu_chain") chain_caught = !c.report.passed();
    }
    std::cout << "relu fault " << (relu_caught ? "detected" : "MISSED") << "; chain "
              << (chain_caught ? "detected" : "MISSED") << '\n';
    return relu_caught && chain_caught && !crisisfuse::all_passed(cases) ? 0 : 1;
}
