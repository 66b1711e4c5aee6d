#pragma once

#include "twostep/dataset.hpp"
#include "twostep/error.hpp"
#include "twostep/synthgen.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>

namespace testing {

inline const twostep::Dataset& default_cohort() {
    static const twostep::Dataset d = twostep::generate_cohort(twostep::default_calibration());
    return d;
}

inline std::size_t count_pos(const twostep::Dataset& d, const twostep::IndexSet& rows) {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](auto i) { return d.labels[i] == 1; }));
}

inline std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("twostep_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string pss_name(int segment) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "PSS_%02d", segment);
    return buf;
}

}  // namespace testing

#define CHECK_KIND(expr, expected_kind)                                  \
    do {                                                                 \
        bool thrown_ = false;                                            \
        try {                                                            \
            (void)(expr);                                                \
        } catch (const twostep::Error& e_) {                             \
            thrown_ = true;                                              \
            CHECK_MESSAGE(e_.kind() == (expected_kind), e_.what());      \
        }                                                                \
        CHECK_MESSAGE(thrown_, "expected twostep::Error from " #expr);  \
    } while (0)
