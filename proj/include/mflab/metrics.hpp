#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mflab/errors.hpp"
#include "mflab/tensor.hpp"

namespace mflab {

/// Shortest decimal form that round-trips the exact double (std::to_chars).
std::string format_double(double v);

/// One telemetry record per optimizer step. wall_ms is elapsed wall-clock
/// milliseconds since the stage started; it is the only column that is not
/// reproducible across reruns.
struct MetricsRow {
    std::string stage;
    long iter = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double ema_dist = 0.0;
    long wall_ms = 0;
};

/// Append-only CSV sink with an in-memory mirror. Header is written on open.
class MetricsWriter {
  public:
    MetricsWriter() = default;  // memory-only
    explicit MetricsWriter(const std::string& path);
    void append(const MetricsRow& row);
    void flush();
    const std::vector<MetricsRow>& rows() const { return rows_; }

    static const char* header() { return "stage,iter,loss,grad_norm,ema_dist,wall_ms"; }

  private:
    std::ofstream out_;
    std::vector<MetricsRow> rows_;
};

std::vector<MetricsRow> load_metrics_csv(const std::string& path);

/// Matrix dump with a header row naming the columns.
void save_samples_csv(const std::string& path, const std::vector<std::string>& col_names,
                      const Tensor& rows);

/// Inverse of save_samples_csv: header names out, rows as a {n, d} tensor.
Tensor load_samples_csv(const std::string& path, std::vector<std::string>* col_names = nullptr);

}  // namespace mflab
