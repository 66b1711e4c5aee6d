#include "twostep/dataset.hpp"

#include "twostep/error.hpp"
#include "twostep/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace twostep {

const char* to_string(Block block) noexcept {
    switch (block) {
        case Block::PSS: return "PSS";
        case Block::SSR: return "SSR";
        case Block::TP: return "TP";
        case Block::GSRadial: return "GS";
        case Block::GLPS: return "GLPS";
        case Block::PSD: return "PSD";
        case Block::Clinical: return "clinical";
    }
    return "?";
}

Block block_from_string(std::string_view name) {
    for (Block b : {Block::PSS, Block::SSR, Block::TP, Block::GSRadial, Block::GLPS, Block::PSD,
                    Block::Clinical}) {
        if (name == to_string(b)) return b;
    }
    fail(ErrorKind::SchemaMismatch, "unknown block '" + std::string(name) + "'");
}

SegmentLevel segment_level(int segment) {
    if (segment >= 1 && segment <= 6) return SegmentLevel::Basal;
    if (segment >= 7 && segment <= 12) return SegmentLevel::Mid;
    if (segment >= 13 && segment <= 16) return SegmentLevel::Apical;
    if (segment == 17) return SegmentLevel::Apex;
    fail(ErrorKind::SchemaMismatch, "segment index out of range: " + std::to_string(segment));
}

FeatureSchema::FeatureSchema() {
    auto add_block = [this](Block block, const std::vector<std::string>& cols) {
        blocks_.push_back({block, names_.size(), cols.size()});
        names_.insert(names_.end(), cols.begin(), cols.end());
    };
    for (Block b : {Block::PSS, Block::SSR, Block::TP}) {
        std::vector<std::string> cols;
        for (int s = 1; s <= 17; ++s) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%s_%02d", to_string(b), s);
            cols.emplace_back(buf);
        }
        add_block(b, cols);
    }
    std::vector<std::string> radial;
    for (const char* section : {"MV", "PM", "AP"}) {
        for (const char* layer : {"Endo", "Mid", "Epi"}) {
            radial.push_back(std::string("GS_") + section + "_" + layer);
        }
    }
    add_block(Block::GSRadial, radial);
    add_block(Block::GLPS, {"GLPS_Endo", "GLPS_Mid", "GLPS_Epi"});
    add_block(Block::PSD, {"PSD"});
    add_block(Block::Clinical, {"age", "gender", "hypertension", "diabetes", "hyperlipemia", "smoke",
                                "family_history"});
}

const FeatureSchema& FeatureSchema::standard() {
    static const FeatureSchema schema;
    return schema;
}

const BlockRange& FeatureSchema::range(Block block) const {
    for (const auto& r : blocks_) {
        if (r.block == block) return r;
    }
    fail(ErrorKind::SchemaMismatch, "block not in schema");
}

std::vector<Index> FeatureSchema::columns(Block block) const {
    const auto& r = range(block);
    std::vector<Index> cols(r.size);
    for (Index i = 0; i < r.size; ++i) cols[i] = r.first + i;
    return cols;
}

Index FeatureSchema::find(std::string_view name) const {
    for (Index i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    return kColumns;
}

Index Dataset::positives() const {
    return static_cast<Index>(std::count(labels.begin(), labels.end(), 1));
}

void Dataset::validate() const {
    const auto& schema = FeatureSchema::standard();
    const Index n = labels.size();
    if (static_cast<Index>(features.rows()) != n || subject_ids.size() != n) {
        fail(ErrorKind::SchemaMismatch, "row/label/id counts differ");
    }
    if (static_cast<Index>(features.cols()) != FeatureSchema::kColumns) {
        fail(ErrorKind::SchemaMismatch, "expected 71 feature columns, got " + std::to_string(features.cols()));
    }
    std::unordered_set<std::string> seen;
    for (Index i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            fail(ErrorKind::UnknownCategoryValue, "row " + std::to_string(i) + ": label must be 0 or 1");
        }
        if (!seen.insert(subject_ids[i]).second) {
            fail(ErrorKind::DuplicateSubjectId, "row " + std::to_string(i) + ": '" + subject_ids[i] + "'");
        }
        for (Index c = 0; c < FeatureSchema::kColumns; ++c) {
            const double v = features(i, c);
            if (!std::isfinite(v)) {
                fail(ErrorKind::NonNumericCell, "row " + std::to_string(i) + ", column " + schema.name(c));
            }
            if (c == FeatureSchema::kNumeric && (v < 0 || v != std::floor(v))) {
                fail(ErrorKind::NonNumericCell, "row " + std::to_string(i) + ": age must be a non-negative integer");
            }
            if (schema.is_binary(c) && v != 0.0 && v != 1.0) {
                fail(ErrorKind::UnknownCategoryValue, "row " + std::to_string(i) + ", column " + schema.name(c));
            }
        }
    }
}

Dataset Dataset::subset(std::span<const Index> rows) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    out.subject_ids.reserve(rows.size());
    for (Index i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
        out.labels.push_back(labels[rows[i]]);
        out.subject_ids.push_back(subject_ids[rows[i]]);
    }
    return out;
}

std::vector<double> Dataset::column(Index c) const {
    std::vector<double> out(size());
    for (Index i = 0; i < size(); ++i) out[i] = features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    return out;
}

std::vector<double> Dataset::column(Index c, std::span<const Index> rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (Index r : rows) out.push_back(features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    return out;
}

bool operator==(const Dataset& a, const Dataset& b) {
    return a.labels == b.labels && a.subject_ids == b.subject_ids &&
           a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
           a.features == b.features;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

std::string where(std::string_view source, std::size_t line, std::string_view column) {
    return std::string(source) + ": line " + std::to_string(line) + ", column '" + std::string(column) + "'";
}

double decode_binary(std::string_view cell, std::string_view column, std::string_view source, std::size_t line) {
    if (cell == "0") return 0.0;
    if (cell == "1") return 1.0;
    if (column == "gender") {
        if (cell == "F" || cell == "f") return 0.0;
        if (cell == "M" || cell == "m") return 1.0;
    } else {
        if (cell == "N" || cell == "n") return 0.0;
        if (cell == "Y" || cell == "y") return 1.0;
    }
    fail(ErrorKind::UnknownCategoryValue, where(source, line, column) + ": '" + std::string(cell) + "'");
}

}  // namespace

Dataset parse_cohort(std::string_view text, std::string_view source) {
    const auto& schema = FeatureSchema::standard();
    std::vector<std::string_view> lines;
    for (std::size_t start = 0; start < text.size();) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) fail(ErrorKind::MissingColumn, std::string(source) + ": empty file");

    auto header = split_fields(lines[0]);
    if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].remove_prefix(3);
    auto locate = [&](std::string_view name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        fail(ErrorKind::MissingColumn, std::string(name));
    };
    const std::size_t id_col = locate(kSubjectIdColumn);
    const std::size_t label_col = locate(kLabelColumn);
    std::vector<std::size_t> feature_cols(FeatureSchema::kColumns);
    for (Index c = 0; c < FeatureSchema::kColumns; ++c) feature_cols[c] = locate(schema.name(c));

    Dataset d;
    const std::size_t n = lines.size() - 1;
    d.features.resize(static_cast<Eigen::Index>(n), FeatureSchema::kColumns);
    d.labels.reserve(n);
    d.subject_ids.reserve(n);
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t line_no = r + 2;
        const auto fields = split_fields(lines[r + 1]);
        if (fields.size() != header.size()) {
            fail(ErrorKind::MissingColumn, std::string(source) + ": line " + std::to_string(line_no) + " has " +
                                               std::to_string(fields.size()) + " fields, header has " +
                                               std::to_string(header.size()));
        }
        std::string id(fields[id_col]);
        if (id.empty()) fail(ErrorKind::NonNumericCell, where(source, line_no, kSubjectIdColumn) + ": empty id");
        if (!seen.insert(id).second) {
            fail(ErrorKind::DuplicateSubjectId, where(source, line_no, kSubjectIdColumn) + ": '" + id + "'");
        }
        d.subject_ids.push_back(std::move(id));

        const auto label_cell = fields[label_col];
        if (label_cell == "0") {
            d.labels.push_back(0);
        } else if (label_cell == "1") {
            d.labels.push_back(1);
        } else {
            fail(ErrorKind::UnknownCategoryValue, where(source, line_no, kLabelColumn) + ": '" + std::string(label_cell) + "'");
        }

        for (Index c = 0; c < FeatureSchema::kColumns; ++c) {
            const auto cell = fields[feature_cols[c]];
            const auto& name = schema.name(c);
            double v = 0.0;
            if (schema.is_binary(c)) {
                v = decode_binary(cell, name, source, line_no);
            } else {
                if (!parse_double(cell, v)) {
                    fail(ErrorKind::NonNumericCell, where(source, line_no, name) + ": '" + std::string(cell) + "'");
                }
                if (c == FeatureSchema::kNumeric && (v < 0 || v != std::floor(v))) {
                    fail(ErrorKind::NonNumericCell, where(source, line_no, name) + ": age must be a non-negative integer");
                }
            }
            d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return d;
}

Dataset load_cohort(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_cohort(buf.str(), path.string());
}

namespace {

void append_double(std::string& out, double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

}  // namespace

std::string format_cohort(const Dataset& d) {
    const auto& schema = FeatureSchema::standard();
    std::string out;
    out += kSubjectIdColumn;
    for (const auto& name : schema.names()) {
        out += ',';
        out += name;
    }
    out += ',';
    out += kLabelColumn;
    out += '\n';
    for (Index i = 0; i < d.size(); ++i) {
        out += d.subject_ids[i];
        for (Index c = 0; c < FeatureSchema::kColumns; ++c) {
            out += ',';
            const double v = d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            if (c >= FeatureSchema::kNumeric) {
                out += std::to_string(static_cast<long long>(v));
            } else {
                append_double(out, v);
            }
        }
        out += ',';
        out += d.labels[i] ? '1' : '0';
        out += '\n';
    }
    return out;
}

void write_cohort(const Dataset& d, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::IoFailure, "cannot write " + tmp.string());
        out << format_cohort(d);
        if (!out) fail(ErrorKind::IoFailure, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::IoFailure, "rename to " + path.string() + ": " + ec.message());
}

Index allocate_positives(Index size, Index parent_size, Index parent_pos, double rate) {
    const Index parent_neg = parent_size - parent_pos;
    const Index lo = size > parent_neg ? size - parent_neg : 0;
    const Index hi = std::min(size, parent_pos);
    const Index rest = parent_size - size;
    const auto ok = [&](long long x) {
        if (x < static_cast<long long>(lo) || x > static_cast<long long>(hi)) return false;
        const double dev_part = static_cast<double>(x) - static_cast<double>(size) * rate;
        const double dev_rest = static_cast<double>(parent_pos) - static_cast<double>(x) - static_cast<double>(rest) * rate;
        return std::abs(dev_part) <= 1.0 + 1e-9 && std::abs(dev_rest) <= 1.0 + 1e-9;
    };
    const auto x0 = static_cast<long long>(round_half_up(static_cast<double>(size) * rate));
    for (long long x : {x0, x0 - 1, x0 + 1}) {
        if (ok(x)) return static_cast<Index>(x);
    }
    return static_cast<Index>(std::clamp<long long>(x0, static_cast<long long>(lo), static_cast<long long>(hi)));
}

Split stratified_split(std::span<const int> labels, std::span<const Index> pool, Index held_size, double rate,
                       std::uint64_t seed) {
    IndexSet pos, neg;
    for (Index i : pool) (labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.size() < 2 || neg.size() < 2) {
        fail(ErrorKind::DegenerateClass, "each class needs at least 2 members (have " + std::to_string(pos.size()) +
                                             " positive, " + std::to_string(neg.size()) + " negative)");
    }
    if (held_size == 0 || held_size >= pool.size()) {
        fail(ErrorKind::DegenerateClass, "held-out size " + std::to_string(held_size) + " leaves an empty part");
    }
    const Index held_pos = allocate_positives(held_size, pool.size(), pos.size(), rate);
    const Index held_neg = held_size - held_pos;
    if (held_pos == 0 || held_neg == 0 || held_pos == pos.size() || held_neg == neg.size()) {
        fail(ErrorKind::DegenerateClass, "split would empty a class from one part");
    }
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    Split out;
    out.held.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(held_pos));
    out.held.insert(out.held.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(held_neg));
    out.rest.assign(pos.begin() + static_cast<std::ptrdiff_t>(held_pos), pos.end());
    out.rest.insert(out.rest.end(), neg.begin() + static_cast<std::ptrdiff_t>(held_neg), neg.end());
    std::sort(out.held.begin(), out.held.end());
    std::sort(out.rest.begin(), out.rest.end());
    return out;
}

Split stratified_split(const Dataset& d, double holdout_fraction, std::uint64_t seed) {
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        fail(ErrorKind::InvalidConfig, "holdout fraction must lie in (0,1)");
    }
    const Index n = d.size();
    const auto all = iota_indices(n);
    const double rate = static_cast<double>(d.positives()) / static_cast<double>(n);
    return stratified_split(d.labels, all, round_half_up(holdout_fraction * static_cast<double>(n)), rate, seed);
}

PartitionSizes partition_sizes(Index n) {
    PartitionSizes s{};
    s.test = round_half_up(0.15 * static_cast<double>(n));
    const Index rest = n - s.test;
    s.validation0 = round_half_up(0.2 * static_cast<double>(rest));
    s.training_pool = rest - s.validation0;
    s.first_validation = round_half_up(0.2 * static_cast<double>(s.training_pool));
    s.first_train = s.training_pool - s.first_validation;
    return s;
}

Partition make_paper_partition(std::span<const int> labels, Index k, std::uint64_t seed) {
    if (k < 1) fail(ErrorKind::InvalidConfig, "K must be at least 1");
    const Index n = labels.size();
    const auto sizes = partition_sizes(n);
    if (sizes.test == 0 || sizes.validation0 == 0 || sizes.first_train == 0 || sizes.first_validation == 0) {
        fail(ErrorKind::CohortTooSmall, "cohort of " + std::to_string(n) + " leaves an empty partition subset");
    }
    const Index pos = static_cast<Index>(std::count(labels.begin(), labels.end(), 1));
    const double rate = static_cast<double>(pos) / static_cast<double>(n);
    const auto all = iota_indices(n);

    Partition p;
    auto outer = stratified_split(labels, all, sizes.test, rate, mix_seed(seed, 0));
    p.test = std::move(outer.held);
    auto inner = stratified_split(labels, outer.rest, sizes.validation0, rate, mix_seed(seed, 1));
    p.validation0 = std::move(inner.held);
    p.training_pool = std::move(inner.rest);
    p.first_step.reserve(k);
    for (Index i = 0; i < k; ++i) {
        auto s = stratified_split(labels, p.training_pool, sizes.first_validation, rate, mix_seed(seed, 2 + i));
        p.first_step.push_back({std::move(s.rest), std::move(s.held)});
    }
    return p;
}

Partition make_paper_partition(const Dataset& d, Index k, std::uint64_t seed) {
    return make_paper_partition(d.labels, k, seed);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string Partition::fingerprint() const {
    std::string bytes;
    auto put = [&bytes](const IndexSet& s, char tag) {
        bytes += tag;
        for (Index i : s) {
            bytes += std::to_string(i);
            bytes += ',';
        }
    };
    put(test, 'T');
    put(validation0, 'V');
    put(training_pool, 'P');
    for (const auto& f : first_step) {
        put(f.train, 't');
        put(f.validation, 'v');
    }
    return hex64(fnv1a64(bytes));
}

}  // namespace twostep
