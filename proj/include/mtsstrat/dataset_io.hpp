#ifndef MTSSTRAT_DATASET_IO_HPP
#define MTSSTRAT_DATASET_IO_HPP

#include "dataset.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace mtsstrat {

enum class DatasetFormat { CsvLong, Json };

inline DatasetFormat parse_dataset_format(std::string_view s) {
    if (s == "csv-long" || s == "csv") {
        return DatasetFormat::CsvLong;
    }
    if (s == "json") {
        return DatasetFormat::Json;
    }
    throw ConfigError("unknown dataset format '" + std::string(s) + "'");
}

/// Format from the file extension: `.json` is JSON, anything else csv-long.
inline DatasetFormat guess_dataset_format(const std::filesystem::path& path) {
    return path.extension() == ".json" ? DatasetFormat::Json : DatasetFormat::CsvLong;
}

/// `data.csv` keeps its statics in `data.statics.csv`.
inline std::filesystem::path statics_sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p.replace_extension();
    p += ".statics.csv";
    return p;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) {
            f.remove_prefix(1);
        }
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) {
            f.remove_suffix(1);
        }
    }
    return out;
}

inline void check_csv_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of(",\n\r#") != std::string::npos || s.front() == ' ' || s.back() == ' ') {
        throw DataError(std::string("cannot write ") + what + " '" + s + "' to CSV");
    }
}

inline long parse_int_field(std::string_view s, const std::string& where) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError(where + ": expected an integer, got '" + std::string(s) + "'");
    }
    return v;
}

inline std::string static_to_text(const StaticValue& v) {
    if (const auto* d = std::get_if<double>(&v)) {
        return format_double(*d);
    }
    return std::get<std::string>(v);
}

inline StaticValue static_from_text(std::string_view s) {
    double d;
    if (parse_double(s, d)) {
        return d;
    }
    return std::string(s);
}

inline void load_statics_csv(const std::filesystem::path& path, Dataset& ds) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open statics file " + path.string());
    }
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        pos.emplace(ds.records[i].id, i);
    }
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        auto fields = split_csv_line(line);
        const std::string where = path.filename().string() + ":" + std::to_string(lineno);
        if (!header) {
            if (fields.size() != 3 || fields[0] != "id" || fields[1] != "name" || fields[2] != "value") {
                throw DataError(where + ": statics header must be 'id,name,value'");
            }
            header = true;
            continue;
        }
        if (fields.size() != 3) {
            throw DataError(where + ": expected 3 fields");
        }
        auto it = pos.find(std::string(fields[0]));
        if (it == pos.end()) {
            throw DataError(where + ": unknown record id '" + std::string(fields[0]) + "'");
        }
        ds.records[it->second].statics[std::string(fields[1])] = static_from_text(fields[2]);
    }
}

} // namespace detail

/// Reads the long CSV layout (see docs/formats.md). Metadata comment lines are
/// optional; without them features, records, and T are inferred from the rows
/// and every record must reach the same length.
inline Dataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file " + path.string());
    }
    const std::string file = path.filename().string();

    std::optional<Eigen::Index> declared_T;
    std::vector<std::string> names;
    std::vector<FeatureKind> kinds;
    std::unordered_map<std::string, std::size_t> feature_pos;
    std::vector<std::string> record_ids;
    std::vector<int> record_labels;
    std::unordered_map<std::string, std::size_t> record_pos;

    struct Cell {
        std::size_t rec, feat;
        long t;
        double value;
        bool padded;
        std::size_t line;
    };
    std::vector<Cell> cells;

    auto add_feature = [&](const std::string& name, FeatureKind k, const std::string& where) {
        auto [it, inserted] = feature_pos.emplace(name, names.size());
        if (inserted) {
            names.push_back(name);
            kinds.push_back(k);
        } else if (kinds[it->second] != k) {
            throw DataError(where + ": feature '" + name + "' declared with kinds " + to_string(kinds[it->second]) +
                            " and " + to_string(k));
        }
        return it->second;
    };
    auto add_record = [&](const std::string& id, int label, const std::string& where) {
        auto [it, inserted] = record_pos.emplace(id, record_ids.size());
        if (inserted) {
            record_ids.push_back(id);
            record_labels.push_back(label);
        } else if (record_labels[it->second] != label) {
            throw DataError(where + ": record '" + id + "' has inconsistent labels");
        }
        return it->second;
    };

    std::vector<std::string> header;
    int col_id = -1, col_feature = -1, col_kind = -1, col_t = -1, col_value = -1, col_label = -1, col_padded = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = file + ":" + std::to_string(lineno);
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::istringstream meta(line.substr(1));
            std::string key;
            meta >> key;
            if (key == "T") {
                long t;
                if (!(meta >> t) || t <= 0) {
                    throw DataError(where + ": bad T declaration");
                }
                declared_T = t;
            } else if (key == "feature") {
                std::string name, kind;
                if (!(meta >> name >> kind)) {
                    throw DataError(where + ": bad feature declaration");
                }
                add_feature(name, parse_feature_kind(kind), where);
            } else if (key == "record") {
                std::string id;
                int label;
                if (!(meta >> id >> label) || (label != 0 && label != 1)) {
                    throw DataError(where + ": bad record declaration");
                }
                add_record(id, label, where);
            }
            continue;
        }
        auto fields = detail::split_csv_line(line);
        if (header.empty()) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                const std::string name(fields[i]);
                int* slot = name == "id"        ? &col_id
                            : name == "feature" ? &col_feature
                            : name == "kind"    ? &col_kind
                            : name == "t"       ? &col_t
                            : name == "value"   ? &col_value
                            : name == "label"   ? &col_label
                            : name == "padded"  ? &col_padded
                                                : nullptr;
                if (slot == nullptr) {
                    throw DataError(where + ": unknown column '" + name + "'");
                }
                if (*slot >= 0) {
                    throw DataError(where + ": duplicate column '" + name + "'");
                }
                *slot = static_cast<int>(i);
                header.push_back(name);
            }
            for (auto [col, name] : {std::pair{col_id, "id"}, {col_feature, "feature"}, {col_kind, "kind"},
                                     {col_t, "t"}, {col_value, "value"}, {col_label, "label"}}) {
                if (col < 0) {
                    throw DataError(where + ": missing column '" + name + "'");
                }
            }
            continue;
        }
        if (fields.size() != header.size()) {
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        }
        const long label = detail::parse_int_field(fields[col_label], where + " field 'label'");
        if (label != 0 && label != 1) {
            throw DataError(where + " field 'label': must be 0 or 1");
        }
        FeatureKind kind;
        try {
            kind = parse_feature_kind(fields[col_kind]);
        } catch (const DataError& e) {
            throw DataError(where + " field 'kind': " + e.what());
        }
        const auto feat = add_feature(std::string(fields[col_feature]), kind, where);
        const auto rec = add_record(std::string(fields[col_id]), static_cast<int>(label), where);
        const long t = detail::parse_int_field(fields[col_t], where + " field 't'");
        if (t < 0) {
            throw DataError(where + " field 't': negative time index");
        }
        double value;
        if (!parse_double(fields[col_value], value)) {
            throw DataError(where + " field 'value': not a number '" + std::string(fields[col_value]) + "'");
        }
        if (!value_respects_kind(value, kind)) {
            throw DataError(where + " field 'value': " + std::string(fields[col_value]) + " violates kind " +
                            to_string(kind));
        }
        bool padded = false;
        if (col_padded >= 0) {
            const long p = detail::parse_int_field(fields[col_padded], where + " field 'padded'");
            if (p != 0 && p != 1) {
                throw DataError(where + " field 'padded': must be 0 or 1");
            }
            padded = p == 1;
        }
        cells.push_back({rec, feat, t, value, padded, lineno});
    }
    if (header.empty() && !record_ids.empty()) {
        throw DataError(file + ": missing header row");
    }

    Dataset ds;
    ds.feature_names = names;
    ds.kinds = kinds;
    std::vector<long> max_t(record_ids.size(), -1);
    for (const auto& c : cells) {
        max_t[c.rec] = std::max(max_t[c.rec], c.t);
    }
    if (declared_T) {
        ds.T = *declared_T;
        for (const auto& c : cells) {
            if (c.t >= ds.T) {
                throw DataError("shape error: " + file + ":" + std::to_string(c.line) + " record '" +
                                record_ids[c.rec] + "' has t=" + std::to_string(c.t) + " beyond T=" +
                                std::to_string(ds.T));
            }
        }
    } else {
        long T = 0;
        for (auto m : max_t) {
            T = std::max(T, m + 1);
        }
        for (std::size_t r = 0; r < record_ids.size(); ++r) {
            if (max_t[r] + 1 != T) {
                throw DataError("shape error: record '" + record_ids[r] + "' has length " +
                                std::to_string(max_t[r] + 1) + ", others have " + std::to_string(T));
            }
        }
        ds.T = T;
    }
    const auto F = static_cast<Eigen::Index>(names.size());
    ds.records.resize(record_ids.size());
    for (std::size_t r = 0; r < record_ids.size(); ++r) {
        auto& rec = ds.records[r];
        rec.id = record_ids[r];
        rec.label = record_labels[r];
        rec.values = Matrix::Zero(F, ds.T);
        rec.mask = BoolMatrix::Constant(F, ds.T, false);
        rec.padded = BoolMatrix::Constant(F, ds.T, false);
    }
    for (const auto& c : cells) {
        auto& rec = ds.records[c.rec];
        if (rec.mask(c.feat, c.t)) {
            throw DataError(file + ":" + std::to_string(c.line) + ": duplicate cell for record '" + rec.id + "'");
        }
        rec.values(c.feat, c.t) = c.value;
        rec.mask(c.feat, c.t) = true;
        rec.padded(c.feat, c.t) = c.padded;
    }
    const auto sidecar = statics_sidecar_path(path);
    if (std::filesystem::exists(sidecar)) {
        detail::load_statics_csv(sidecar, ds);
    }
    validate(ds);
    return ds;
}

inline void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    validate(ds);
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    bool any_padded = false;
    for (const auto& r : ds.records) {
        any_padded = any_padded || r.padded.any();
    }
    out << "# mts-csv-long " << ds.schema_version << '\n';
    out << "# T " << ds.T << '\n';
    for (Eigen::Index f = 0; f < ds.num_features(); ++f) {
        detail::check_csv_token(ds.feature_names[f], "feature name");
        out << "# feature " << ds.feature_names[f] << ' ' << to_string(ds.kinds[f]) << '\n';
    }
    for (const auto& r : ds.records) {
        detail::check_csv_token(r.id, "record id");
        out << "# record " << r.id << ' ' << r.label << '\n';
    }
    out << "id,feature,kind,t,value,label" << (any_padded ? ",padded" : "") << '\n';
    for (const auto& r : ds.records) {
        for (Eigen::Index f = 0; f < r.values.rows(); ++f) {
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                if (!r.mask(f, t)) {
                    continue;
                }
                out << r.id << ',' << ds.feature_names[f] << ',' << to_string(ds.kinds[f]) << ',' << t << ','
                    << format_double(r.values(f, t)) << ',' << r.label;
                if (any_padded) {
                    out << ',' << (r.padded(f, t) ? 1 : 0);
                }
                out << '\n';
            }
        }
    }
    if (!out) {
        throw DataError("write error: " + path.string());
    }
    bool any_statics = false;
    for (const auto& r : ds.records) {
        any_statics = any_statics || !r.statics.empty();
    }
    const auto sidecar = statics_sidecar_path(path);
    if (!any_statics) {
        std::filesystem::remove(sidecar);
        return;
    }
    std::ofstream st(sidecar);
    if (!st) {
        throw DataError("write error: cannot open " + sidecar.string());
    }
    st << "id,name,value\n";
    for (const auto& r : ds.records) {
        for (const auto& [name, v] : r.statics) {
            detail::check_csv_token(name, "static name");
            const auto text = detail::static_to_text(v);
            if (std::holds_alternative<std::string>(v)) {
                double d;
                detail::check_csv_token(text, "static value");
                if (parse_double(text, d)) {
                    throw DataError("static '" + name + "' of record '" + r.id +
                                    "' is a numeric-looking string; store it as a number");
                }
            }
            st << r.id << ',' << name << ',' << text << '\n';
        }
    }
    if (!st) {
        throw DataError("write error: " + sidecar.string());
    }
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
    using nlohmann::json;
    json doc;
    doc["format"] = "mts-json";
    doc["schema_version"] = ds.schema_version;
    doc["T"] = ds.T;
    doc["features"] = json::array();
    for (Eigen::Index f = 0; f < ds.num_features(); ++f) {
        doc["features"].push_back({{"name", ds.feature_names[f]}, {"kind", to_string(ds.kinds[f])}});
    }
    doc["records"] = json::array();
    for (const auto& r : ds.records) {
        json rec;
        rec["id"] = r.id;
        rec["label"] = r.label;
        json values = json::array(), mask = json::array(), padded = json::array();
        for (Eigen::Index f = 0; f < r.values.rows(); ++f) {
            json vrow = json::array(), mrow = json::array(), prow = json::array();
            for (Eigen::Index t = 0; t < r.values.cols(); ++t) {
                vrow.push_back(r.values(f, t));
                mrow.push_back(r.mask(f, t) ? 1 : 0);
                prow.push_back(r.padded(f, t) ? 1 : 0);
            }
            values.push_back(std::move(vrow));
            mask.push_back(std::move(mrow));
            padded.push_back(std::move(prow));
        }
        rec["values"] = std::move(values);
        rec["mask"] = std::move(mask);
        if (r.padded.any()) {
            rec["padded"] = std::move(padded);
        }
        if (!r.statics.empty()) {
            json st = json::object();
            for (const auto& [name, v] : r.statics) {
                if (const auto* d = std::get_if<double>(&v)) {
                    st[name] = *d;
                } else {
                    st[name] = std::get<std::string>(v);
                }
            }
            rec["statics"] = std::move(st);
        }
        doc["records"].push_back(std::move(rec));
    }
    return doc;
}

inline Dataset dataset_from_json(const nlohmann::json& doc) {
    auto require = [](const nlohmann::json& j, const char* key, const std::string& where) -> const nlohmann::json& {
        if (!j.is_object() || !j.contains(key)) {
            throw DataError(where + ": missing field '" + key + "'");
        }
        return j.at(key);
    };
    try {
        if (require(doc, "format", "dataset") != "mts-json") {
            throw DataError("dataset: field 'format' must be 'mts-json'");
        }
        for (const auto& [key, _] : doc.items()) {
            if (key != "format" && key != "schema_version" && key != "T" && key != "features" && key != "records") {
                throw DataError("dataset: unknown field '" + key + "'");
            }
        }
        Dataset ds;
        ds.schema_version = require(doc, "schema_version", "dataset").get<std::string>();
        ds.T = require(doc, "T", "dataset").get<Eigen::Index>();
        for (const auto& f : require(doc, "features", "dataset")) {
            ds.feature_names.push_back(require(f, "name", "feature").get<std::string>());
            ds.kinds.push_back(parse_feature_kind(require(f, "kind", "feature").get<std::string>()));
        }
        const auto F = ds.num_features();
        std::size_t idx = 0;
        for (const auto& jr : require(doc, "records", "dataset")) {
            const std::string where = "record[" + std::to_string(idx++) + "]";
            for (const auto& [key, _] : jr.items()) {
                if (key != "id" && key != "label" && key != "values" && key != "mask" && key != "padded" &&
                    key != "statics") {
                    throw DataError(where + ": unknown field '" + key + "'");
                }
            }
            MtsRecord r;
            r.id = require(jr, "id", where).get<std::string>();
            r.label = require(jr, "label", where).get<int>();
            const auto& values = require(jr, "values", where);
            const auto& mask = require(jr, "mask", where);
            const auto rows = static_cast<Eigen::Index>(values.size());
            const auto cols = rows > 0 ? static_cast<Eigen::Index>(values[0].size()) : ds.T;
            if (rows != F) {
                throw DataError("shape error: " + where + " has " + std::to_string(rows) + " feature rows, expected " +
                                std::to_string(F));
            }
            r.values = Matrix::Zero(rows, cols);
            r.mask = BoolMatrix::Constant(rows, cols, true);
            r.padded = BoolMatrix::Constant(rows, cols, false);
            const bool has_padded = jr.contains("padded");
            if (mask.size() != values.size() || (has_padded && jr["padded"].size() != values.size())) {
                throw DataError("shape error: " + where + " mask rows differ from values");
            }
            for (Eigen::Index f = 0; f < rows; ++f) {
                if (static_cast<Eigen::Index>(values[f].size()) != cols ||
                    static_cast<Eigen::Index>(mask[f].size()) != cols ||
                    (has_padded && static_cast<Eigen::Index>(jr["padded"][f].size()) != cols)) {
                    throw DataError("shape error: " + where + " has ragged rows");
                }
                for (Eigen::Index t = 0; t < cols; ++t) {
                    r.values(f, t) = values[f][t].get<double>();
                    r.mask(f, t) = mask[f][t].get<int>() != 0;
                    if (has_padded) {
                        r.padded(f, t) = jr["padded"][f][t].get<int>() != 0;
                    }
                }
            }
            if (jr.contains("statics")) {
                for (const auto& [name, v] : jr["statics"].items()) {
                    if (v.is_number()) {
                        r.statics[name] = v.get<double>();
                    } else if (v.is_string()) {
                        r.statics[name] = v.get<std::string>();
                    } else {
                        throw DataError(where + ": static '" + name + "' must be a number or string");
                    }
                }
            }
            ds.records.push_back(std::move(r));
        }
        validate(ds);
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset JSON: ") + e.what());
    }
}

inline Dataset load_dataset_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return dataset_from_json(doc);
}

inline void save_dataset_json(const Dataset& ds, const std::filesystem::path& path) {
    validate(ds);
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    out << dataset_to_json(ds).dump() << '\n';
    if (!out) {
        throw DataError("write error: " + path.string());
    }
}

inline Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    return format == DatasetFormat::Json ? load_dataset_json(path) : load_dataset_csv(path);
}

inline Dataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, guess_dataset_format(path)); }

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path, DatasetFormat format) {
    if (format == DatasetFormat::Json) {
        save_dataset_json(ds, path);
    } else {
        save_dataset_csv(ds, path);
    }
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    save_dataset(ds, path, guess_dataset_format(path));
}

} // namespace mtsstrat

#endif
