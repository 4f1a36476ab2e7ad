// CSV ingestion, preprocessing transforms and small output helpers for the
// command-line front end.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "unidrf/types.hpp"

namespace unidrf::cli {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        throw InputError("column '" + name + "' not found in input header");
    }

    Eigen::VectorXd column(const std::string& name) const {
        const auto& c = columns[index_of(name)];
        return Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    std::string out(s.substr(a, b - a));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        fields.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return fields;
}

}  // namespace detail

/// Headered, comma-separated, '.' decimal. Errors name line and column.
inline Table parse_csv(std::istream& in, const std::string& source = "input") {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> fields = detail::split(line);
        if (t.header.empty()) {
            t.header = fields;
            for (std::size_t k = 0; k < fields.size(); ++k)
                if (fields[k].empty())
                    throw InputError(source + ":" + std::to_string(lineno) + ":" + std::to_string(k + 1) +
                                     ": empty column name");
            t.columns.resize(fields.size());
            continue;
        }
        if (fields.size() != t.header.size())
            throw InputError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        for (std::size_t k = 0; k < fields.size(); ++k) {
            const std::string& f = fields[k];
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v))
                throw InputError(source + ":" + std::to_string(lineno) + ":" + std::to_string(k + 1) +
                                 ": non-numeric value '" + f + "' in column '" + t.header[k] + "'");
            t.columns[k].push_back(v);
        }
    }
    if (t.header.empty()) throw InputError(source + ": empty file");
    return t;
}

inline Table read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open input file '" + path + "'");
    return parse_csv(in, path);
}

/// Outcome / treatment transform: none, log(v + shift), or the two-parameter
/// Box-Cox ((v + shift)^lambda - 1) / lambda (log when lambda = 0).
struct Transform {
    enum class Kind { none, log, boxcox } kind = Kind::none;
    double lambda = 1.0;
    double shift = 0.0;

    static Transform parse(const std::string& spec) {
        Transform tr;
        if (spec.empty() || spec == "none") return tr;
        auto number = [&](const std::string& s) {
            double v = 0.0;
            const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
                throw ConfigError("bad number '" + s + "' in transform '" + spec + "'");
            return v;
        };
        if (spec == "log") {
            tr.kind = Kind::log;
            return tr;
        }
        if (spec.rfind("log:", 0) == 0) {
            tr.kind = Kind::log;
            tr.shift = number(spec.substr(4));
            return tr;
        }
        if (spec.rfind("boxcox:", 0) == 0) {
            tr.kind = Kind::boxcox;
            const std::string rest = spec.substr(7);
            const auto comma = rest.find(',');
            tr.lambda = number(rest.substr(0, comma));
            if (comma != std::string::npos) tr.shift = number(rest.substr(comma + 1));
            return tr;
        }
        throw ConfigError("unknown transform '" + spec + "' (expected none, log[:shift] or boxcox:lambda[,shift])");
    }

    std::string describe() const {
        std::ostringstream os;
        os << std::setprecision(17);
        switch (kind) {
            case Kind::none: return "none";
            case Kind::log: os << "log:" << shift; return os.str();
            case Kind::boxcox: os << "boxcox:" << lambda << "," << shift; return os.str();
        }
        return "none";
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& v, const std::string& what) const {
        if (kind == Kind::none) return v;
        Eigen::VectorXd out(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double z = v(i) + shift;
            if (!(z > 0.0))
                throw InputError(what + " row " + std::to_string(i + 1) + ": transform needs a positive value, got " +
                                 std::to_string(z));
            if (kind == Kind::log || lambda == 0.0)
                out(i) = std::log(z);
            else
                out(i) = (std::pow(z, lambda) - 1.0) / lambda;
        }
        return out;
    }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "";
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a(ss.str()));
}

/// Shortest round-trip formatting so repeated runs produce identical bytes.
inline std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
        if (!out_) throw InputError("cannot write '" + path + "'");
        row(header);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t k = 0; k < fields.size(); ++k) out_ << (k ? "," : "") << fields[k];
        out_ << '\n';
    }

    void row(std::initializer_list<double> values) {
        std::size_t k = 0;
        for (double v : values) out_ << (k++ ? "," : "") << fmt(v);
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace unidrf::cli
