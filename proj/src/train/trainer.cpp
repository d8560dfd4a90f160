#include "vln/train/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vln/train/windowing.hpp"

namespace vln::train {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kOrderTag = 0x6f72646572;  // "order"

void put_counter(Checkpoint& ckpt, const std::string& name, double value) {
  ckpt.entries.push_back({"trainer." + name, {1}, {static_cast<float>(value)}});
}

double get_counter(const Checkpoint& ckpt, const std::string& name) {
  const auto* e = ckpt.find("trainer." + name);
  if (!e || e->values.size() != 1) throw CheckpointError("checkpoint has no trainer." + name);
  return e->values[0];
}

std::string epoch_tag(int epoch) {
  std::string digits = std::to_string(epoch);
  return std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

}  // namespace

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t size) {
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t(0));
  CounterRng rng(CounterRng::derive(seed, {kOrderTag, std::uint64_t(epoch)}));
  for (std::size_t i = size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Checkpoint load_model_checkpoint(const fs::path& path, model::VideoLadderNet<float>& net) {
  auto ckpt = load_checkpoint(path.string());
  restore_store(net.store(), ckpt, net.config().hash());
  return ckpt;
}

Trainer::Trainer(RunConfig config, const data::MovingMnist& data, fs::path run_dir, std::string run_id)
    : config_(std::move(config)), data_(&data), run_dir_(std::move(run_dir)), run_id_(std::move(run_id)) {
  config_.validate();
  net_ = std::make_unique<Net>(config_.model);
  net_->initialize(config_.train.init_seed);
  optimizer_ = std::make_unique<RmsProp<float>>(
      net_->store(), RmsPropOptions{config_.learning_rate(), config_.train.rho, config_.train.epsilon});
  fs::create_directories(run_dir_ / "checkpoints");
  std::ofstream(run_dir_ / "config.ini") << config_.to_text();
}

fs::path Trainer::checkpoint_path(int epoch) const {
  return run_dir_ / "checkpoints" / (run_id_ + "-epoch" + epoch_tag(epoch) + ".ckpt");
}

fs::path Trainer::best_path() const { return run_dir_ / "checkpoints" / (run_id_ + "-best.ckpt"); }

std::optional<fs::path> Trainer::last_checkpoint() const {
  for (int e = epochs_done_; e > 0; --e) {
    if (fs::exists(checkpoint_path(e))) return checkpoint_path(e);
  }
  return std::nullopt;
}

int Trainer::resume() {
  const std::string prefix = run_id_ + "-epoch";
  int newest = 0;
  for (const auto& entry : fs::directory_iterator(run_dir_ / "checkpoints")) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".ckpt") continue;
    const auto digits = name.substr(prefix.size(), name.size() - prefix.size() - 5);
    int epoch = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), epoch);
    if (ec == std::errc() && end == digits.data() + digits.size()) newest = std::max(newest, epoch);
  }
  if (newest == 0) return 0;
  const auto ckpt = load_model_checkpoint(checkpoint_path(newest), *net_);
  optimizer_->load(ckpt);
  epochs_done_ = int(get_counter(ckpt, "epoch"));
  steps_ = std::uint64_t(get_counter(ckpt, "steps"));
  const int best = int(get_counter(ckpt, "best_epoch"));
  best_epoch_ = best > 0 ? std::optional<int>(best) : std::nullopt;
  metrics_ = fs::exists(metrics_path()) ? MetricsLog::load(metrics_path().string()) : MetricsLog{};
  metrics_.truncate(epochs_done_);
  return epochs_done_;
}

void Trainer::save(const fs::path& path) const {
  Checkpoint ckpt;
  ckpt.config_hash = config_.model.hash();
  append_entries(ckpt, net_->store().all());
  optimizer_->save(ckpt);
  put_counter(ckpt, "epoch", epochs_done_);
  put_counter(ckpt, "steps", double(steps_));
  put_counter(ckpt, "best_epoch", best_epoch_.value_or(0));
  const auto tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, path);
}

double Trainer::train_step(std::span<const data::VideoSequence> batch, std::vector<double>* per_frame) {
  net_->store().zero_grads();
  auto result = sequence_loss(*net_, batch, config_.train.horizon, BatchNormMode::kTrain);
  const double loss = result.loss.item();
  if (!std::isfinite(loss)) {
    throw NumericalError("training loss became " + std::to_string(loss) + " at step " + std::to_string(steps_ + 1),
                         last_checkpoint());
  }
  backward(result.loss);
  if (per_frame) {
    per_frame->resize(result.per_frame.size(), 0.0);
    for (std::size_t k = 0; k < result.per_frame.size(); ++k) (*per_frame)[k] += result.per_frame[k];
  }
  result = {};
  optimizer_->step();
  ++steps_;
  return loss;
}

void Trainer::run(std::ostream* log) {
  const auto& tc = config_.train;
  const auto& dc = config_.data;
  const auto validation = data_->stream(data::SplitKind::kValidation, 0);
  const std::size_t batch_size = std::size_t(tc.batch_size);

  for (int epoch = epochs_done_ + 1; epoch <= tc.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto stream = data_->stream(data::SplitKind::kTrain, tc.resample_each_epoch ? std::uint64_t(epoch) : 0);
    const std::size_t size = std::min(dc.train_size, stream.size());
    const auto order = epoch_order(dc.seed, tc.resample_each_epoch ? epoch : 0, size);

    std::vector<double> per_frame(std::size_t(tc.horizon), 0.0);
    std::size_t batches = 0;
    for (std::size_t b = 0; b < size; b += batch_size) {
      std::vector<data::VideoSequence> batch;
      for (std::size_t i = b; i < std::min(size, b + batch_size); ++i) batch.push_back(stream.at(order[i]));

      const double loss = train_step(batch, &per_frame);
      ++batches;
      if (log && (batches % 10 == 0 || b + batch_size >= size)) {
        *log << "epoch " << epoch << " batch " << batches << '/' << (size + batch_size - 1) / batch_size
             << " loss " << loss << std::endl;
      }
    }
    for (auto& v : per_frame) v /= double(batches);
    metrics_.add_partial(epoch, "train", per_frame);

    if (dc.validation_size > 0) {
      const auto summary = evaluate_stream(model_predictor(*net_), validation, dc.validation_size, tc.batch_size);
      metrics_.add(epoch, "validation", summary);
      const auto* best = best_epoch_ ? metrics_.mean(*best_epoch_, "validation") : nullptr;
      if (!best || summary.mean < best->loss) best_epoch_ = epoch;
    }
    epochs_done_ = epoch;
    metrics_.save(metrics_path().string());
    if (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs) save(checkpoint_path(epoch));
    if (best_epoch_ == epoch) save(best_path());

    if (log) {
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *log << "epoch " << epoch << " train " << metrics_.mean(epoch, "train")->loss;
      if (const auto* v = metrics_.mean(epoch, "validation")) *log << " validation " << v->loss;
      *log << " (" << seconds << " s)" << std::endl;
    }
  }
}

}  // namespace vln::train
