// one line per acceptance criterion; exit status 1 if any fails
#include <fmt/format.h>

#include <chrono>
#include <cstdlib>

#include "mfclab/lab.hpp"

using namespace mfclab;

int main(int argc, char** argv) {
    fs::path out = argc > 1 ? argv[1] : "acceptance_out";
    std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 7;
    int failed = 0;
    for (const auto& e : suite_entries()) {
        auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool pass = false;
        try {
            auto s = suite(e.name, seed, out);
            const auto& r = s.runs.at(0);
            pass = r.pass();
            if (!r.error.empty()) detail = "error: " + r.error;
            auto j = r.to_json();
            for (const auto& c : j.at("checks"))
                detail += fmt::format("{}{}{} [{}]", detail.empty() ? "" : "; ", c.at("pass").get<bool>() ? "" : "FAILED ",
                                      c.at("name").get<std::string>(), c.at("text").get<std::string>());
        } catch (const std::exception& ex) {
            detail = std::string("error: ") + ex.what();
        }
        double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool in_budget = sec <= e.budget;
        if (!in_budget) detail += fmt::format("; over budget {:.0f}s", e.budget);
        pass = pass && in_budget;
        failed += !pass;
        fmt::print("criterion {:>2} {:<21} {}  {:.1f}s  {}\n", e.criterion, e.name, pass ? "PASS" : "FAIL", sec, detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", suite_entries().size() - failed, suite_entries().size());
    return failed ? 1 : 0;
}
