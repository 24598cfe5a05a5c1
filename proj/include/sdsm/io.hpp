#pragma once

// Dataset and result files. Numbers are written in shortest round-trip
// form, so re-reading an emitted file reproduces every double exactly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "sdsm/dataset.hpp"
#include "sdsm/errors.hpp"
#include "sdsm/simulator.hpp"

#include <unistd.h>

namespace sdsm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Number formatting and parsing.

inline void append_number(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

inline void append_number(std::string& out, long long v) {
    char buf[24];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

[[nodiscard]] inline std::string format_number(double v) {
    std::string s;
    append_number(s, v);
    return s;
}

/// Whole file contents; DataError when unreadable.
[[nodiscard]] inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::string s;
    in.seekg(0, std::ios::end);
    s.resize(static_cast<std::size_t>(in.tellg()));
    in.seekg(0);
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    return s;
}

/// Writes to a sibling temporary, then renames over `path`.
inline void atomic_write(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot rename into '" + path.string() + "'");
    }
}

namespace detail {

// Splits `text` into lines without copying; strips a trailing CR.
class LineReader {
public:
    explicit LineReader(std::string_view text) : text_(text) {}

    bool next(std::string_view& line) {
        if (pos_ >= text_.size()) return false;
        const std::size_t end = text_.find('\n', pos_);
        const std::size_t stop = end == std::string_view::npos ? text_.size() : end;
        line = text_.substr(pos_, stop - pos_);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos_ = stop + 1;
        ++number_;
        return true;
    }

    [[nodiscard]] std::size_t number() const { return number_; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t number_ = 0;
};

inline void split_fields(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

[[noreturn]] inline void parse_fail(const std::string& file, std::size_t line, std::string_view field,
                                    const std::string& why) {
    throw DataError(file + ":" + std::to_string(line) + ": field '" + std::string(field) + "': " + why);
}

inline double parse_double(std::string_view s, const std::string& file, std::size_t line, std::string_view field) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
        parse_fail(file, line, field, "not a number: '" + std::string(s) + "'");
    if (!std::isfinite(v)) parse_fail(file, line, field, "non-finite value");
    return v;
}

inline long long parse_int(std::string_view s, const std::string& file, std::size_t line, std::string_view field) {
    s = trim(s);
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
        parse_fail(file, line, field, "not an integer: '" + std::string(s) + "'");
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset CSV: x,y,value,stratum,cov_1,...,cov_p; empty value = missing.

[[nodiscard]] inline std::string dataset_to_csv(const SpatialDataset& d) {
    d.validate();
    std::string out;
    out.reserve(d.size() * (48 + 20 * d.num_covariates));
    out += "x,y,value,stratum";
    for (std::size_t c = 1; c <= d.num_covariates; ++c) out += ",cov_" + std::to_string(c);
    out += '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        append_number(out, d.locations[i].x);
        out += ',';
        append_number(out, d.locations[i].y);
        out += ',';
        if (d.observed[i]) append_number(out, d.values[i]);
        out += ',';
        append_number(out, static_cast<long long>(d.strata[i]));
        for (double v : d.covariate_row(i)) {
            out += ',';
            append_number(out, v);
        }
        out += '\n';
    }
    return out;
}

[[nodiscard]] inline SpatialDataset dataset_from_csv(std::string_view text, const std::string& name = "<dataset>") {
    detail::LineReader lines(text);
    std::string_view line;
    if (!lines.next(line)) throw DataError(name + ": empty file");
    std::vector<std::string_view> f;
    detail::split_fields(line, f);
    const char* fixed[] = {"x", "y", "value", "stratum"};
    if (f.size() < 4) throw DataError(name + ":1: header must start with x,y,value,stratum");
    for (std::size_t k = 0; k < 4; ++k)
        if (detail::trim(f[k]) != fixed[k])
            throw DataError(name + ":1: header column " + std::to_string(k + 1) + " must be '" + fixed[k] + "'");
    const std::size_t p = f.size() - 4;
    for (std::size_t c = 0; c < p; ++c)
        if (detail::trim(f[4 + c]) != "cov_" + std::to_string(c + 1))
            throw DataError(name + ":1: expected header column 'cov_" + std::to_string(c + 1) + "'");
    std::vector<std::string> names(f.begin(), f.end());

    SpatialDataset d;
    d.num_covariates = p;
    const std::size_t estimate = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    d.locations.reserve(estimate);
    d.values.reserve(estimate);
    d.observed.reserve(estimate);
    d.strata.reserve(estimate);
    d.covariates.reserve(estimate * p);
    while (lines.next(line)) {
        if (detail::trim(line).empty()) continue;
        detail::split_fields(line, f);
        const std::size_t ln = lines.number();
        if (f.size() != 4 + p)
            throw DataError(name + ":" + std::to_string(ln) + ": expected " + std::to_string(4 + p) + " fields, got " +
                            std::to_string(f.size()));
        Location s;
        s.x = detail::parse_double(f[0], name, ln, names[0]);
        s.y = detail::parse_double(f[1], name, ln, names[1]);
        d.locations.push_back(s);
        const std::string_view v = detail::trim(f[2]);
        if (v.empty()) {
            d.values.push_back(0.0);
            d.observed.push_back(0);
        } else {
            d.values.push_back(detail::parse_double(v, name, ln, names[2]));
            d.observed.push_back(1);
        }
        const std::string_view st = detail::trim(f[3]);
        d.strata.push_back(st.empty() ? 0 : static_cast<int>(detail::parse_int(st, name, ln, names[3])));
        for (std::size_t c = 0; c < p; ++c) d.covariates.push_back(detail::parse_double(f[4 + c], name, ln, names[4 + c]));
    }
    if (d.size() == 0) throw InsufficientData(name + ": no data rows");
    return d;
}

[[nodiscard]] inline SpatialDataset read_dataset(const fs::path& path) {
    return dataset_from_csv(read_file(path), path.string());
}

inline void write_dataset(const fs::path& path, const SpatialDataset& d) { atomic_write(path, dataset_to_csv(d)); }

// ---------------------------------------------------------------------------
// Truth record: per-row CSV plus scalar metadata as JSON text.

[[nodiscard]] inline std::string truth_to_csv(const TruthRecord& t, const SpatialDataset& d) {
    std::string out = "index,w,nu,epsilon,y_full,masked\n";
    for (std::size_t i = 0; i < t.w.size(); ++i) {
        append_number(out, static_cast<long long>(i));
        for (double v : {t.w[i], t.nu[i], t.epsilon[i], t.y_full[i]}) {
            out += ',';
            append_number(out, v);
        }
        out += d.observed[i] ? ",0\n" : ",1\n";
    }
    return out;
}

[[nodiscard]] inline std::string truth_meta_json(const TruthRecord& t) {
    std::string out = "{\n  \"beta_true\": [";
    for (std::size_t k = 0; k < t.beta_true.size(); ++k) {
        if (k) out += ", ";
        append_number(out, t.beta_true[k]);
    }
    out += "],\n  \"tau2_implied\": ";
    append_number(out, t.tau2_implied);
    out += ",\n  \"realized_snr\": ";
    append_number(out, t.realized_snr);
    out += ",\n  \"masked\": ";
    append_number(out, static_cast<long long>(t.masked));
    out += "\n}\n";
    return out;
}

/// Per-row truth columns as read back from truth.csv.
struct TruthTable {
    std::vector<double> w, nu, epsilon, y_full;
    std::vector<char> masked;

    [[nodiscard]] std::size_t size() const { return w.size(); }
};

[[nodiscard]] inline TruthTable truth_from_csv(std::string_view text, const std::string& name = "<truth>") {
    detail::LineReader lines(text);
    std::string_view line;
    if (!lines.next(line) || detail::trim(line) != "index,w,nu,epsilon,y_full,masked")
        throw DataError(name + ":1: expected header index,w,nu,epsilon,y_full,masked");
    static const char* names[] = {"index", "w", "nu", "epsilon", "y_full", "masked"};
    TruthTable t;
    std::vector<std::string_view> f;
    while (lines.next(line)) {
        if (detail::trim(line).empty()) continue;
        detail::split_fields(line, f);
        const std::size_t ln = lines.number();
        if (f.size() != 6) throw DataError(name + ":" + std::to_string(ln) + ": expected 6 fields");
        const long long idx = detail::parse_int(f[0], name, ln, names[0]);
        if (idx != static_cast<long long>(t.size())) detail::parse_fail(name, ln, names[0], "rows out of order");
        t.w.push_back(detail::parse_double(f[1], name, ln, names[1]));
        t.nu.push_back(detail::parse_double(f[2], name, ln, names[2]));
        t.epsilon.push_back(detail::parse_double(f[3], name, ln, names[3]));
        t.y_full.push_back(detail::parse_double(f[4], name, ln, names[4]));
        t.masked.push_back(detail::parse_int(f[5], name, ln, names[5]) != 0 ? 1 : 0);
    }
    return t;
}

[[nodiscard]] inline TruthTable read_truth(const fs::path& path) { return truth_from_csv(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Generic small CSV builder for result tables.

class CsvBuilder {
public:
    explicit CsvBuilder(std::vector<std::string> header) : columns_(header.size()) {
        for (std::size_t k = 0; k < header.size(); ++k) {
            if (k) text_ += ',';
            text_ += header[k];
        }
        text_ += '\n';
    }

    CsvBuilder& cell(double v) {
        sep();
        append_number(text_, v);
        return *this;
    }
    CsvBuilder& cell(std::size_t v) {
        sep();
        append_number(text_, static_cast<long long>(v));
        return *this;
    }
    CsvBuilder& cell(int v) { return cell_int(v); }
    CsvBuilder& cell(std::string_view s) {
        sep();
        text_ += s;
        return *this;
    }
    CsvBuilder& cell(const char* s) { return cell(std::string_view(s)); }

    void end_row() {
        if (filled_ != columns_) throw DimensionMismatch("csv row has the wrong number of cells");
        text_ += '\n';
        filled_ = 0;
    }

    [[nodiscard]] const std::string& str() const { return text_; }

private:
    CsvBuilder& cell_int(long long v) {
        sep();
        append_number(text_, v);
        return *this;
    }
    void sep() {
        if (filled_ > 0) text_ += ',';
        ++filled_;
    }

    std::size_t columns_;
    std::size_t filled_ = 0;
    std::string text_;
};

}  // namespace sdsm
