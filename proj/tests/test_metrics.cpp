#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pvada/metrics.hpp"

using namespace pvada;

TEST_CASE("overall accuracy") {
    const std::vector<int> a{0, 1, 2}, b{0, 1, 2}, c{0, 1, 3};
    CHECK(overall_accuracy(a, b) == 1.0);
    CHECK(overall_accuracy(a, c) == doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(overall_accuracy(std::vector<int>{}, std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS(overall_accuracy(a, std::vector<int>{0}), ValidationError);
}

TEST_CASE("corruption error worked examples") {
    const std::array<double, 5> base{0.8, 0.8, 0.8, 0.8, 0.8};
    CHECK(corruption_error(base, base) == doctest::Approx(1.0));
    CHECK(corruption_error({1, 1, 1, 1, 1}, base) == doctest::Approx(0.0));
    CHECK(corruption_error({0.9, 0.9, 0.9, 0.9, 0.9}, base) == doctest::Approx(0.5));
    CHECK_THROWS_AS(corruption_error(base, {1, 1, 1, 1, 1}), ValidationError);
}

TEST_CASE("corruption error scales with the error mass") {
    const std::array<double, 5> base{0.7, 0.6, 0.5, 0.4, 0.3};
    const std::array<double, 5> oa{0.95, 0.9, 0.85, 0.8, 0.75};
    const double ce = corruption_error(oa, base);
    const double c = 2.0;
    std::array<double, 5> scaled{};
    for (int i = 0; i < 5; ++i) scaled[static_cast<size_t>(i)] = 1.0 - c * (1.0 - oa[static_cast<size_t>(i)]);
    CHECK(corruption_error(scaled, base) == doctest::Approx(c * ce).epsilon(1e-12));
}

TEST_CASE("mean_ce averages exactly seven values") {
    const std::vector<double> ones(7, 1.0);
    CHECK(mean_ce(ones) == doctest::Approx(1.0));
    CHECK(mean_ce(std::vector<double>{0, 0, 0, 0, 0, 0, 7}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mean_ce(std::vector<double>(6, 1.0)), ValidationError);
    CHECK_THROWS_AS(mean_ce(std::vector<double>(8, 1.0)), ValidationError);
}

TEST_CASE("baseline table validation") {
    BaselineTable t = BaselineTable::identity();
    CHECK_NOTHROW(t.validate());
    t.oa[0][0] = 1.0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.oa[0][0] = -0.1;
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("baseline table json round trip") {
    const auto path = std::filesystem::temp_directory_path() / "pvada_baseline_test.json";
    {
        std::ofstream out(path);
        out << "{\n  \"name\": \"toy\",\n";
        const char* kinds[] = {"scale",      "jitter",    "drop_global", "drop_local",
                               "add_global", "add_local", "rotate"};
        for (int k = 0; k < 7; ++k)
            out << "  \"" << kinds[k] << "\": [0.9, 0.8, 0.7, 0.6, 0.5]" << (k < 6 ? ",\n" : "\n");
        out << "}\n";
    }
    BaselineTable t = BaselineTable::from_json_file(path);
    CHECK(t.name == "toy");
    CHECK(t.oa[3][4] == doctest::Approx(0.5));
    std::filesystem::remove(path);
}

TEST_CASE("report assembly, mOA, mCE and the missing-set error") {
    std::map<std::pair<int, int>, double> oa;
    for (int k = 0; k < 7; ++k)
        for (int s = 1; s <= 5; ++s) oa[{k, s}] = 0.9;

    BaselineTable base = BaselineTable::identity();
    EvalReport r = make_report(0.95, oa, base);
    CHECK(r.moa == doctest::Approx(0.9));
    // identity baseline: CE is the raw mean error mass
    CHECK(r.ce[0] == doctest::Approx(0.5 / 5.0));
    CHECK(r.mce == doctest::Approx(0.1));

    oa.erase({2, 3});
    oa.erase({6, 1});
    CHECK_THROWS_WITH_AS(make_report(0.95, oa, base),
                         doctest::Contains("drop_global_3"), ValidationError);
}

TEST_CASE("report json round trip is bit exact") {
    std::map<std::pair<int, int>, double> oa;
    uint64_t state = 99;
    for (int k = 0; k < 7; ++k)
        for (int s = 1; s <= 5; ++s) {
            state = state * 6364136223846793005ull + 1442695040888963407ull;
            oa[{k, s}] = 0.3 + 0.7 * static_cast<double>(state >> 11) * 0x1.0p-53;
        }
    BaselineTable base = BaselineTable::identity();
    base.name = "identity";
    EvalReport r = make_report(0.923, oa, base);
    EvalReport r2 = EvalReport::from_json(r.to_json());
    CHECK(r2.moa == r.moa);
    CHECK(r2.mce == r.mce);
    CHECK(r2.clean_oa == r.clean_oa);
    for (int k = 0; k < 7; ++k) {
        CHECK(r2.ce[static_cast<size_t>(k)] == r.ce[static_cast<size_t>(k)]);
        for (int s = 0; s < 5; ++s)
            CHECK(r2.oa[static_cast<size_t>(k)][static_cast<size_t>(s)] ==
                  r.oa[static_cast<size_t>(k)][static_cast<size_t>(s)]);
    }
}

TEST_CASE("table rendering lists the seven corruption columns in order") {
    std::map<std::pair<int, int>, double> oa;
    for (int k = 0; k < 7; ++k)
        for (int s = 1; s <= 5; ++s) oa[{k, s}] = 0.5;
    EvalReport r = make_report(0.9, oa, BaselineTable::identity());
    const std::string table = r.to_table();
    const size_t scale = table.find("Scale");
    const size_t jitter = table.find("Jitter");
    const size_t rotate = table.find("Rotate");
    CHECK(scale != std::string::npos);
    CHECK(jitter != std::string::npos);
    CHECK(rotate != std::string::npos);
    CHECK(scale < jitter);
    CHECK(jitter < rotate);
}
