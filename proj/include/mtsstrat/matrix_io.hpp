#ifndef MTSSTRAT_MATRIX_IO_HPP
#define MTSSTRAT_MATRIX_IO_HPP

#include "common.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace mtsstrat {

/// A dense matrix with row/column record ids and a provenance document
/// (method, parameters, seeds) that travels with it.
struct LabeledMatrix {
    Matrix values;
    std::vector<std::string> row_ids;
    std::vector<std::string> col_ids;
    nlohmann::json provenance = nlohmann::json::object();

    bool is_square_self() const { return row_ids == col_ids; }
};

struct DistanceMatrix : LabeledMatrix {};
struct SimilarityMatrix : LabeledMatrix {};

/// CSV with a header row and leading column of ids.
inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_names, const std::string& corner = "id") {
    if (static_cast<Eigen::Index>(row_ids.size()) != m.rows() || static_cast<Eigen::Index>(col_names.size()) != m.cols()) {
        throw DataError("write_matrix_csv: id lists do not match matrix shape");
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    out << corner;
    for (const auto& c : col_names) {
        out << ',' << c;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << row_ids[i];
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << ',' << format_double(m(i, j));
        }
        out << '\n';
    }
    if (!out) {
        throw DataError("write error: " + path.string());
    }
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    CsvTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) {
            fields.push_back(f);
        }
        if (!line.empty() && line.back() == ',') {
            fields.emplace_back();
        }
        if (table.header.empty()) {
            table.header = std::move(fields);
        } else {
            if (fields.size() != table.header.size()) {
                throw DataError(path.filename().string() + ": row " + std::to_string(table.rows.size() + 2) +
                                " has " + std::to_string(fields.size()) + " fields, header has " +
                                std::to_string(table.header.size()));
            }
            table.rows.push_back(std::move(fields));
        }
    }
    if (table.header.empty()) {
        throw DataError(path.filename().string() + ": empty CSV");
    }
    return table;
}

/// `dist.csv` keeps its provenance in `dist.meta.json`.
inline std::filesystem::path matrix_sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p.replace_extension();
    p += ".meta.json";
    return p;
}

inline void save_labeled_matrix(const LabeledMatrix& m, const std::filesystem::path& path) {
    write_matrix_csv(path, m.values, m.row_ids, m.col_ids);
    std::ofstream meta(matrix_sidecar_path(path));
    if (!meta) {
        throw DataError("write error: cannot open " + matrix_sidecar_path(path).string());
    }
    meta << m.provenance.dump(2) << '\n';
}

inline LabeledMatrix load_labeled_matrix(const std::filesystem::path& path) {
    const auto table = read_csv_table(path);
    LabeledMatrix m;
    m.col_ids.assign(table.header.begin() + 1, table.header.end());
    m.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(m.col_ids.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        m.row_ids.push_back(table.rows[i][0]);
        for (std::size_t j = 1; j < table.rows[i].size(); ++j) {
            double v;
            if (!parse_double(table.rows[i][j], v)) {
                throw DataError(path.filename().string() + ": row " + std::to_string(i + 2) + " column '" +
                                table.header[j] + "': not a number");
            }
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) = v;
        }
    }
    const auto meta_path = matrix_sidecar_path(path);
    if (std::filesystem::exists(meta_path)) {
        std::ifstream meta(meta_path);
        try {
            meta >> m.provenance;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(meta_path.string() + ": " + e.what());
        }
    }
    return m;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    auto out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols) {
            throw DataError("ragged matrix in JSON");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(i, c) = j[i][c].get<double>();
        }
    }
    return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
    auto out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v(i));
    }
    return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = j[i].get<double>();
    }
    return v;
}

} // namespace mtsstrat

#endif
