#include "mflab/metrics.hpp"

#include <charconv>
#include <sstream>

namespace mflab {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
    if (!out_) throw ConfigError("MetricsWriter: cannot write " + path);
    out_ << header() << "\n";
}

void MetricsWriter::append(const MetricsRow& row) {
    rows_.push_back(row);
    if (out_.is_open()) {
        out_ << row.stage << "," << row.iter << "," << format_double(row.loss) << ","
             << format_double(row.grad_norm) << "," << format_double(row.ema_dist) << ","
             << row.wall_ms << "\n";
    }
}

void MetricsWriter::flush() {
    if (out_.is_open()) out_.flush();
}

namespace {

double parse_field_double(const std::string& s, int line) {
    double v;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("metrics: bad numeric field '" + s + "'", line);
    return v;
}

long parse_field_long(const std::string& s, int line) {
    long v;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ParseError("metrics: bad integer field '" + s + "'", line);
    return v;
}

}  // namespace

std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_metrics_csv: cannot open " + path);
    std::vector<MetricsRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != MetricsWriter::header())
                throw ParseError("metrics: unexpected header '" + line + "'", lineno);
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 6)
            throw ParseError("metrics: expected 6 fields, got " +
                                 std::to_string(fields.size()),
                             lineno);
        MetricsRow r;
        r.stage = fields[0];
        r.iter = parse_field_long(fields[1], lineno);
        r.loss = parse_field_double(fields[2], lineno);
        r.grad_norm = parse_field_double(fields[3], lineno);
        r.ema_dist = parse_field_double(fields[4], lineno);
        r.wall_ms = parse_field_long(fields[5], lineno);
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_samples_csv(const std::string& path, const std::vector<std::string>& col_names,
                      const Tensor& rows) {
    if (!col_names.empty() && rows.size() > 0 && col_names.size() != rows.cols())
        throw DimensionError("save_samples_csv: column name count mismatch");
    std::ofstream out(path);
    if (!out) throw ConfigError("save_samples_csv: cannot write " + path);
    for (std::size_t j = 0; j < col_names.size(); ++j)
        out << (j ? "," : "") << col_names[j];
    out << "\n";
    for (std::size_t i = 0; i < rows.rows() && rows.size() > 0; ++i) {
        for (std::size_t j = 0; j < rows.cols(); ++j)
            out << (j ? "," : "") << format_double(rows.at(i, j));
        out << "\n";
    }
}

Tensor load_samples_csv(const std::string& path, std::vector<std::string>* col_names) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_samples_csv: cannot open " + path);
    std::vector<std::string> names;
    std::vector<double> values;
    std::string line;
    int lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (lineno == 1) {
            names = fields;
            width = names.size();
            continue;
        }
        if (fields.size() != width)
            throw ParseError("samples: expected " + std::to_string(width) + " fields, got " +
                                 std::to_string(fields.size()),
                             lineno);
        for (const std::string& field : fields)
            values.push_back(parse_field_double(field, lineno));
    }
    if (width == 0) throw ParseError("samples: missing header row", 1);
    if (col_names) *col_names = names;
    const std::size_t n = values.size() / width;
    return Tensor({n, width}, std::move(values));
}

}  // namespace mflab
