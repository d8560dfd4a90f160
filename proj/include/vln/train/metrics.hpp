#pragma once

// Metrics CSV: header "epoch,split,timestep,loss", one row per (epoch,
// split, timestep) with timestep 11..20 or "mean". Losses are written in
// shortest round-trip form so a reloaded log compares equal.

#include <string>
#include <vector>

#include "vln/train/windowing.hpp"

namespace vln::train {

struct MetricsRow {
  int epoch = 0;
  std::string split;
  std::string timestep;  // "11".."20" or "mean"
  double loss = 0;

  bool operator==(const MetricsRow&) const = default;
};

std::string format_loss(double value);

class MetricsLog {
 public:
  // Ten timestep rows followed by the mean row.
  void add(int epoch, const std::string& split, const EvalSummary& summary);
  // Rows for the first per_frame.size() timesteps plus a mean row.
  void add_partial(int epoch, const std::string& split, const std::vector<double>& per_frame);

  const std::vector<MetricsRow>& rows() const { return rows_; }
  // Drops rows after `epoch`.
  void truncate(int epoch);
  // Mean row of (epoch, split), if present.
  const MetricsRow* mean(int epoch, const std::string& split) const;

  std::string to_csv() const;
  static MetricsLog from_csv(const std::string& text);
  void save(const std::string& path) const;
  static MetricsLog load(const std::string& path);

 private:
  std::vector<MetricsRow> rows_;
};

}  // namespace vln::train
