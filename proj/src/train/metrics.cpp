#include "vln/train/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vln::train {

std::string format_loss(double value) {
  char buffer[64];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  if (ec != std::errc()) throw std::runtime_error("cannot format loss value");
  return std::string(buffer, end);
}

void MetricsLog::add(int epoch, const std::string& split, const EvalSummary& summary) {
  for (int k = 0; k < kEvalHorizon; ++k) {
    rows_.push_back({epoch, split, std::to_string(data::kPastFrames + 1 + k), summary.per_timestep[std::size_t(k)]});
  }
  rows_.push_back({epoch, split, "mean", summary.mean});
}

void MetricsLog::add_partial(int epoch, const std::string& split, const std::vector<double>& per_frame) {
  double total = 0;
  for (std::size_t k = 0; k < per_frame.size(); ++k) {
    rows_.push_back({epoch, split, std::to_string(data::kPastFrames + 1 + int(k)), per_frame[k]});
    total += per_frame[k];
  }
  rows_.push_back({epoch, split, "mean", per_frame.empty() ? 0.0 : total / double(per_frame.size())});
}

void MetricsLog::truncate(int epoch) {
  std::erase_if(rows_, [epoch](const MetricsRow& r) { return r.epoch > epoch; });
}

const MetricsRow* MetricsLog::mean(int epoch, const std::string& split) const {
  for (const auto& r : rows_) {
    if (r.epoch == epoch && r.split == split && r.timestep == "mean") return &r;
  }
  return nullptr;
}

std::string MetricsLog::to_csv() const {
  std::string out = "epoch,split,timestep,loss\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.epoch) + ',' + r.split + ',' + r.timestep + ',' + format_loss(r.loss) + '\n';
  }
  return out;
}

MetricsLog MetricsLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,split,timestep,loss") {
    throw std::runtime_error("metrics CSV has an unexpected header");
  }
  MetricsLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string epoch, split, timestep, loss;
    if (!std::getline(fields, epoch, ',') || !std::getline(fields, split, ',') ||
        !std::getline(fields, timestep, ',') || !std::getline(fields, loss)) {
      throw std::runtime_error("malformed metrics row: " + line);
    }
    MetricsRow row{0, split, timestep, 0};
    const auto e = std::from_chars(epoch.data(), epoch.data() + epoch.size(), row.epoch);
    const auto l = std::from_chars(loss.data(), loss.data() + loss.size(), row.loss);
    if (e.ec != std::errc() || l.ec != std::errc()) throw std::runtime_error("malformed metrics row: " + line);
    log.rows_.push_back(row);
  }
  return log;
}

void MetricsLog::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << to_csv();
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot replace " + path);
}

MetricsLog MetricsLog::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_csv(text.str());
}

}  // namespace vln::train
