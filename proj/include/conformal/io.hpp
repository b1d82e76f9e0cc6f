#pragma once

// CSV ingestion and emission. Datasets use a header row with feature columns
// x1..xd and a response column named y (regression) or label (classification).

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "conformal/core.hpp"

namespace conformal {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& field, std::size_t line_no) {
    std::string t = trim(field);
    if (t.empty()) throw DataError("csv: missing field at line " + std::to_string(line_no));
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(t, &pos);
    } catch (const std::exception&) {
        throw DataError("csv: bad number '" + t + "' at line " + std::to_string(line_no));
    }
    if (pos != t.size()) throw DataError("csv: bad number '" + t + "' at line " + std::to_string(line_no));
    if (!std::isfinite(v)) throw DataError("csv: non-finite value at line " + std::to_string(line_no));
    return v;
}

}  // namespace detail

// Reads a dataset. Column order is free; feature columns must be named
// x1..xd, the response column y or label. Rows with missing fields are
// rejected with their line number.
inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::string header;
    if (!std::getline(in, header)) throw DataError("csv: empty file: " + path);
    auto cols = detail::split_csv_line(header);

    std::vector<int> feature_slot(cols.size(), -1);
    int response_col = -1;
    TaskKind kind = TaskKind::Regression;
    std::size_t d = 0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
        std::string name = detail::trim(cols[j]);
        if (name == "y" || name == "label") {
            if (response_col >= 0) throw DataError("csv: duplicate response column");
            response_col = static_cast<int>(j);
            kind = (name == "label") ? TaskKind::Classification : TaskKind::Regression;
        } else if (name.size() >= 2 && name[0] == 'x') {
            std::size_t idx = 0;
            try {
                idx = std::stoul(name.substr(1));
            } catch (const std::exception&) {
                throw DataError("csv: unknown column '" + name + "'");
            }
            if (idx == 0) throw DataError("csv: feature columns are named x1..xd");
            feature_slot[j] = static_cast<int>(idx - 1);
            d = std::max(d, idx);
        } else {
            throw DataError("csv: unknown column '" + name + "'");
        }
    }
    if (response_col < 0) throw DataError("csv: missing response column (y or label)");
    if (d == 0) throw DataError("csv: no feature columns (x1..xd)");

    std::vector<double> features;
    std::vector<double> responses;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != cols.size())
            throw DataError("csv: wrong field count at line " + std::to_string(line_no));
        std::vector<double> row(d, 0.0);
        std::vector<bool> seen(d, false);
        for (std::size_t j = 0; j < fields.size(); ++j) {
            double v = detail::parse_number(fields[j], line_no);
            if (static_cast<int>(j) == response_col) {
                responses.push_back(v);
            } else {
                row[static_cast<std::size_t>(feature_slot[j])] = v;
                seen[static_cast<std::size_t>(feature_slot[j])] = true;
            }
        }
        for (bool s : seen)
            if (!s) throw DataError("csv: missing feature at line " + std::to_string(line_no));
        features.insert(features.end(), row.begin(), row.end());
    }
    if (responses.empty()) throw DataError("csv: no data rows in " + path);
    return Dataset(std::move(features), d, std::move(responses), kind);
}

// Fixed-format numeric rendering so reruns are byte-identical.
inline std::string format_number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream ss;
    ss.precision(12);
    ss << v;
    return ss.str();
}

class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        if (!out_) throw DataError("cannot open output file: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

  private:
    std::ofstream out_;
};

}  // namespace conformal
