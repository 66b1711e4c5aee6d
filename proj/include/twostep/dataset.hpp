#pragma once

#include "twostep/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace twostep {

enum class Block { PSS, SSR, TP, GSRadial, GLPS, PSD, Clinical };

const char* to_string(Block block) noexcept;
Block block_from_string(std::string_view name);

// AHA 17-segment levels. Segments 1-6 basal, 7-12 mid-cavity, 13-16 apical,
// 17 apex.
enum class SegmentLevel { Basal, Mid, Apical, Apex };

SegmentLevel segment_level(int segment);  // segment is 1-based

struct BlockRange {
    Block block;
    Index first;  // column offset in the 71-column predictor table
    Index size;
};

// Ordered column layout of the cohort table: 64 numeric strain descriptors
// followed by 7 clinical descriptors.
class FeatureSchema {
public:
    static const FeatureSchema& standard();

    static constexpr Index kNumeric = 64;
    static constexpr Index kCategorical = 7;
    static constexpr Index kColumns = kNumeric + kCategorical;
    static constexpr Index kSegments = 17;

    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(Index column) const { return names_.at(column); }
    std::span<const BlockRange> blocks() const { return blocks_; }
    const BlockRange& range(Block block) const;
    std::vector<Index> columns(Block block) const;

    // Returns kColumns when the name is not part of the schema.
    Index find(std::string_view name) const;

    bool is_numeric(Index column) const { return column < kNumeric; }
    bool is_binary(Index column) const { return column > kNumeric; }  // age is the first clinical column

private:
    FeatureSchema();

    std::vector<std::string> names_;
    std::vector<BlockRange> blocks_;
};

inline constexpr std::string_view kSubjectIdColumn = "subject_id";
inline constexpr std::string_view kLabelColumn = "chd_label";

struct Dataset {
    Eigen::MatrixXd features;  // n x 71, schema order
    std::vector<int> labels;   // 1 = CHD positive
    std::vector<std::string> subject_ids;

    Index size() const { return labels.size(); }
    Index positives() const;

    // Throws on any violated invariant (shape, label domain, duplicate ids,
    // non-finite cells, non-integer age, non-binary categorical).
    void validate() const;

    Dataset subset(std::span<const Index> rows) const;
    std::vector<double> column(Index column) const;
    std::vector<double> column(Index column, std::span<const Index> rows) const;
};

bool operator==(const Dataset& a, const Dataset& b);

Dataset load_cohort(const std::filesystem::path& path);
Dataset parse_cohort(std::string_view csv_text, std::string_view source = "<memory>");
std::string format_cohort(const Dataset& d);
void write_cohort(const Dataset& d, const std::filesystem::path& path);

// Per-class count of positives for a subset of `size` rows drawn from a parent
// holding `parent_pos` of `parent_size`, targeting the cohort rate `rate`.
// Round-half-up on the positive count, nudged by one when needed so that both
// the subset and its complement stay within one subject of the cohort rate.
Index allocate_positives(Index size, Index parent_size, Index parent_pos, double rate);

inline Index round_half_up(double x) { return static_cast<Index>(std::floor(x + 0.5)); }

struct Split {
    IndexSet held;
    IndexSet rest;
};

Split stratified_split(const Dataset& d, double holdout_fraction, std::uint64_t seed);

// Same as above but restricted to `pool` (a subset of row indices of d), with
// stratification targeting `rate`.
Split stratified_split(std::span<const int> labels, std::span<const Index> pool, Index held_size,
                       double rate, std::uint64_t seed);

struct FirstStepSplit {
    IndexSet train;
    IndexSet validation;
};

struct Partition {
    IndexSet test;
    IndexSet validation0;
    IndexSet training_pool;
    std::vector<FirstStepSplit> first_step;

    Index k() const { return first_step.size(); }
    std::string fingerprint() const;
};

struct PartitionSizes {
    Index test, validation0, training_pool, first_train, first_validation;
};

// Subset sizes for a cohort of n: 15% test, 20% of the remainder as
// validation0, 20% of the training pool as each first-step validation set.
PartitionSizes partition_sizes(Index n);

Partition make_paper_partition(const Dataset& d, Index k, std::uint64_t seed);
Partition make_paper_partition(std::span<const int> labels, Index k, std::uint64_t seed);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace twostep
