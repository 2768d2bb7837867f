#include "pvada/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pvada/errors.hpp"

namespace pvada {

BaselineTable BaselineTable::identity() {
    BaselineTable t;
    t.name = "identity (not a model baseline)";
    return t;  // all entries zero: CE denominator is 5 per kind
}

BaselineTable BaselineTable::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("baseline table: cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    BaselineTable t;
    t.name = j.value("name", path.filename().string());
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        const std::string key = corruption_name(static_cast<CorruptionKind>(k));
        if (!j.contains(key))
            throw ValidationError("baseline table: missing corruption '" + key + "'");
        const auto& vals = j.at(key);
        if (!vals.is_array() || vals.size() != kNumSeverities)
            throw ValidationError("baseline table: '" + key + "' must list " +
                                  std::to_string(kNumSeverities) + " severities");
        for (int s = 0; s < kNumSeverities; ++s)
            t.oa[static_cast<size_t>(k)][static_cast<size_t>(s)] = vals[static_cast<size_t>(s)].get<double>();
    }
    t.validate();
    return t;
}

void BaselineTable::validate() const {
    for (int k = 0; k < kNumAtomicCorruptions; ++k)
        for (int s = 0; s < kNumSeverities; ++s) {
            const double v = oa[static_cast<size_t>(k)][static_cast<size_t>(s)];
            if (!(v >= 0.0) || v >= 1.0)
                throw ValidationError("baseline table: OA for " +
                                      corruption_name(static_cast<CorruptionKind>(k)) +
                                      " severity " + std::to_string(s + 1) + " is " +
                                      std::to_string(v) +
                                      "; entries must lie in [0,1) or CE is undefined");
        }
}

double overall_accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw ValidationError("overall_accuracy: " + std::to_string(predictions.size()) +
                              " predictions vs " + std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw ValidationError("overall_accuracy: empty input");
    size_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double corruption_error(const std::array<double, kNumSeverities>& oa,
                        const std::array<double, kNumSeverities>& baseline) {
    double num = 0.0, den = 0.0;
    for (int s = 0; s < kNumSeverities; ++s) {
        num += 1.0 - oa[static_cast<size_t>(s)];
        den += 1.0 - baseline[static_cast<size_t>(s)];
    }
    if (den <= 0.0)
        throw ValidationError("corruption_error: baseline error mass is zero, CE undefined");
    return num / den;
}

double mean_ce(std::span<const double> ce) {
    if (ce.size() != kNumAtomicCorruptions)
        throw ValidationError("mean_ce: expected " + std::to_string(kNumAtomicCorruptions) +
                              " values, got " + std::to_string(ce.size()));
    double sum = 0.0;
    for (double v : ce) sum += v;
    return sum / static_cast<double>(kNumAtomicCorruptions);
}

EvalReport make_report(double clean_oa,
                       const std::map<std::pair<int, int>, double>& oa_by_set,
                       const BaselineTable& baseline) {
    std::string missing;
    for (int k = 0; k < kNumAtomicCorruptions; ++k)
        for (int s = 1; s <= kNumSeverities; ++s)
            if (!oa_by_set.count({k, s})) {
                CorruptionSet set;
                set.kind = static_cast<CorruptionKind>(k);
                set.severity = s;
                missing += missing.empty() ? set.name() : ", " + set.name();
            }
    if (!missing.empty())
        throw ValidationError("make_report: missing corrupted sets: " + missing);

    EvalReport r;
    r.clean_oa = clean_oa;
    r.baseline_name = baseline.name;
    double sum_oa = 0.0;
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        for (int s = 1; s <= kNumSeverities; ++s) {
            const double v = oa_by_set.at({k, s});
            r.oa[static_cast<size_t>(k)][static_cast<size_t>(s - 1)] = v;
            sum_oa += v;
        }
        r.ce[static_cast<size_t>(k)] =
            corruption_error(r.oa[static_cast<size_t>(k)], baseline.oa[static_cast<size_t>(k)]);
    }
    r.moa = sum_oa / static_cast<double>(kNumAtomicCorruptions * kNumSeverities);
    r.mce = mean_ce(r.ce);
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["clean_oa"] = clean_oa;
    j["moa"] = moa;
    j["mce"] = mce;
    j["baseline"] = baseline_name;
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        const std::string key = corruption_name(static_cast<CorruptionKind>(k));
        j["oa"][key] = oa[static_cast<size_t>(k)];
        j["ce"][key] = ce[static_cast<size_t>(k)];
    }
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.clean_oa = j.at("clean_oa").get<double>();
    r.moa = j.at("moa").get<double>();
    r.mce = j.at("mce").get<double>();
    r.baseline_name = j.value("baseline", "");
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        const std::string key = corruption_name(static_cast<CorruptionKind>(k));
        r.oa[static_cast<size_t>(k)] =
            j.at("oa").at(key).get<std::array<double, kNumSeverities>>();
        r.ce[static_cast<size_t>(k)] = j.at("ce").at(key).get<double>();
    }
    return r;
}

std::string EvalReport::to_table() const {
    static const char* kHeaders[kNumAtomicCorruptions] = {"Scale",  "Jitter", "Drop-G", "Drop-L",
                                                          "Add-G",  "Add-L",  "Rotate"};
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s", "sev");
    os << line;
    for (const char* h : kHeaders) {
        std::snprintf(line, sizeof(line), "%9s", h);
        os << line;
    }
    os << "\n";
    for (int s = 0; s < kNumSeverities; ++s) {
        std::snprintf(line, sizeof(line), "%-10d", s + 1);
        os << line;
        for (int k = 0; k < kNumAtomicCorruptions; ++k) {
            std::snprintf(line, sizeof(line), "%9.3f", oa[static_cast<size_t>(k)][static_cast<size_t>(s)]);
            os << line;
        }
        os << "\n";
    }
    std::snprintf(line, sizeof(line), "%-10s", "CE");
    os << line;
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        std::snprintf(line, sizeof(line), "%9.3f", ce[static_cast<size_t>(k)]);
        os << line;
    }
    os << "\n";
    std::snprintf(line, sizeof(line), "clean OA %.3f | mOA %.3f | mCE %.3f (baseline: %s)\n",
                  clean_oa, moa, mce, baseline_name.c_str());
    os << line;
    return os.str();
}

}  // namespace pvada
