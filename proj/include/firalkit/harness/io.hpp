#pragma once

// Matrix and dataset files.
//
// CSV: one header row, one point per line. A column named "label" (or the
// name passed in) holds integer class ids; every other column is a feature.
// FKMX: "FKMX", u32 version, u64 rows, u64 cols, then rows*cols little-endian
// f64 in row-major order.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "firalkit/numkit.hpp"

namespace firalkit::harness {

inline constexpr std::uint32_t kFkmxVersion = 1;

struct Dataset {
    Matrix features;          // n x d
    std::vector<int> labels;  // empty when the file has no label column
    std::vector<std::string> feature_names;

    Index size() const { return features.rows(); }
    Index dim() const { return features.cols(); }
    bool has_labels() const { return !labels.empty(); }
    int num_classes() const {
        int c = 0;
        for (int y : labels) c = std::max(c, y + 1);
        return c;
    }
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

template <class T>
void put(std::ostream& os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool get(std::istream& is, T& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) return false;
    v = to_little(v);
    return true;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(where + ": '" + std::string(s) + "' is not a number");
    return v;
}

inline int parse_label(std::string_view s, const std::string& where) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0)
        throw ConfigError(where + ": label '" + std::string(s) + "' is not a non-negative integer");
    return v;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

} // namespace detail

// ---------------------------------------------------------------------------
// FKMX
// ---------------------------------------------------------------------------

inline void save_fkmx(const std::string& path, const Matrix& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os.write("FKMX", 4);
    detail::put<std::uint32_t>(os, kFkmxVersion);
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) detail::put<double>(os, m(i, j));
    if (!os) throw ConfigError("write failed: " + path);
}

inline Matrix load_fkmx(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "FKMX", 4) != 0) throw ConfigError(path + ": missing FKMX magic");
    std::uint32_t version = 0;
    std::uint64_t rows = 0, cols = 0;
    if (!detail::get(is, version) || !detail::get(is, rows) || !detail::get(is, cols))
        throw ConfigError(path + ": truncated header");
    if (version != kFkmxVersion) throw ConfigError(path + ": unsupported FKMX version " + std::to_string(version));
    // Refuse sizes the file cannot possibly hold before allocating.
    is.seekg(0, std::ios::end);
    const auto payload = static_cast<std::uint64_t>(is.tellg()) - 24;
    if (cols != 0 && rows > payload / 8 / cols) throw ConfigError(path + ": header claims more data than the file holds");
    if (rows * cols * 8 != payload) throw ConfigError(path + ": payload size does not match header");
    is.seekg(24);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            if (!detail::get(is, m(i, j))) throw ConfigError(path + ": truncated payload");
    return m;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Writes features (and labels when present). Values use 17 significant
/// digits so they read back exactly.
inline void save_csv(const std::string& path, const Dataset& ds, const std::string& label_name = "label") {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    for (Index j = 0; j < ds.dim(); ++j) {
        if (j) os << ',';
        os << (static_cast<std::size_t>(j) < ds.feature_names.size() ? ds.feature_names[static_cast<std::size_t>(j)]
                                                                       : "x" + std::to_string(j));
    }
    if (ds.has_labels()) os << (ds.dim() ? "," : "") << label_name;
    os << '\n';
    os.precision(17);
    for (Index i = 0; i < ds.size(); ++i) {
        for (Index j = 0; j < ds.dim(); ++j) {
            if (j) os << ',';
            os << ds.features(i, j);
        }
        if (ds.has_labels()) os << (ds.dim() ? "," : "") << ds.labels[static_cast<std::size_t>(i)];
        os << '\n';
    }
    if (!os) throw ConfigError("write failed: " + path);
}

inline Dataset load_csv(const std::string& path, const std::string& label_name = "label") {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(path + ": empty file (a header row is required)");
    const auto header = detail::split(line);
    std::optional<std::size_t> label_col;
    Dataset ds;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == label_name) {
            if (label_col) throw ConfigError(path + ": more than one '" + label_name + "' column");
            label_col = c;
        } else {
            ds.feature_names.emplace_back(header[c]);
        }
    }
    std::vector<double> values;
    std::size_t rows = 0;
    for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (cells.size() != header.size())
            throw ConfigError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                              std::to_string(cells.size()));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (label_col && c == *label_col)
                ds.labels.push_back(detail::parse_label(cells[c], where));
            else
                values.push_back(detail::parse_double(cells[c], where));
        }
        ++rows;
    }
    const Index d = static_cast<Index>(ds.feature_names.size());
    ds.features.resize(static_cast<Index>(rows), d);
    for (Index i = 0; i < static_cast<Index>(rows); ++i)
        for (Index j = 0; j < d; ++j) ds.features(i, j) = values[static_cast<std::size_t>(i * d + j)];
    return ds;
}

// ---------------------------------------------------------------------------
// Dispatch on extension
// ---------------------------------------------------------------------------

inline bool is_binary_path(const std::string& path) {
    return detail::ends_with(path, ".fkmx") || detail::ends_with(path, ".bin");
}

/// Loads a dataset. For binary files label_column selects how labels are
/// found: "last" takes them from the final column, anything else means none.
inline Dataset load_dataset(const std::string& path, const std::string& label_column = "label") {
    if (!is_binary_path(path)) return load_csv(path, label_column);
    Dataset ds;
    Matrix m = load_fkmx(path);
    if (label_column == "last") {
        if (m.cols() < 1) throw ConfigError(path + ": no column to read labels from");
        ds.labels.resize(static_cast<std::size_t>(m.rows()));
        for (Index i = 0; i < m.rows(); ++i) {
            const double v = m(i, m.cols() - 1);
            if (!(v >= 0.0) || v != std::floor(v))
                throw ConfigError(path + ": row " + std::to_string(i) + " has non-integer label " + std::to_string(v));
            ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(v);
        }
        ds.features = m.leftCols(m.cols() - 1);
    } else {
        ds.features = std::move(m);
    }
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    if (!is_binary_path(path)) return save_csv(path, ds);
    if (!ds.has_labels()) return save_fkmx(path, ds.features);
    Matrix m(ds.size(), ds.dim() + 1);
    m.leftCols(ds.dim()) = ds.features;
    for (Index i = 0; i < ds.size(); ++i) m(i, ds.dim()) = ds.labels[static_cast<std::size_t>(i)];
    save_fkmx(path, m);
}

} // namespace firalkit::harness
