#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pvada/corruptions.hpp"

namespace pvada {

// Baseline OA per (corruption kind, severity). CE is the ratio of error
// masses against these entries, so an entry of exactly 1 is rejected.
struct BaselineTable {
    std::array<std::array<double, kNumSeverities>, kNumAtomicCorruptions> oa{};
    std::string name;

    // All-zero baseline: CE degenerates to the mean error mass of the
    // evaluated model. Clearly labeled as not being a model baseline.
    static BaselineTable identity();
    static BaselineTable from_json_file(const std::filesystem::path& path);
    void validate() const;
};

double overall_accuracy(std::span<const int> predictions, std::span<const int> labels);

// CE_i = sum_l (1 - OA_{i,l}) / sum_l (1 - OA^base_{i,l})
double corruption_error(const std::array<double, kNumSeverities>& oa,
                        const std::array<double, kNumSeverities>& baseline);

// arithmetic mean of exactly the 7 per-kind CE values
double mean_ce(std::span<const double> ce);

struct EvalReport {
    double clean_oa = 0.0;
    std::array<std::array<double, kNumSeverities>, kNumAtomicCorruptions> oa{};
    double moa = 0.0;
    std::array<double, kNumAtomicCorruptions> ce{};
    double mce = 0.0;
    std::string baseline_name;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    std::string to_table() const;
};

// Assembles the report; every one of the 35 (kind, severity) cells must be
// present in `oa_by_set` or the call fails listing the absent sets.
EvalReport make_report(double clean_oa,
                       const std::map<std::pair<int, int>, double>& oa_by_set,
                       const BaselineTable& baseline);

}  // namespace pvada
