#include "vln/model/ladder_net.hpp"

#include <cmath>
#include <sstream>

#include "vln/common/rng.hpp"

namespace vln::model {

template <typename T>
VideoLadderNet<T>::VideoLadderNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  bn_.epsilon = config_.bn_epsilon;
  bn_.momentum = config_.bn_momentum;
  const int n = config_.num_levels();
  const bool residual = config_.encoder == EncoderKind::kResidual;
  auto width = [&](int l) { return config_.levels[l].width(); };

  int in = 1;
  for (int l = 0; l < n; ++l) {
    const auto& lc = config_.levels[l];
    const std::string prefix = "encoder.level" + std::to_string(l + 1);
    EncoderLevel level;
    if (!residual) {
      level.convs.push_back(ConvBn<T>::create(store_, prefix + ".conv", in, lc.channels[0], 3, 2, lc.dilations[0]));
    } else {
      int c = in;
      for (std::size_t k = 0; k < lc.channels.size(); ++k) {
        level.convs.push_back(ConvBn<T>::create(store_, prefix + ".conv" + std::to_string(k + 1), c,
                                                lc.channels[k], 3, 1, lc.dilations[k]));
        c = lc.channels[k];
      }
      if (in != width(l)) {
        level.skip_kernel = store_.add_parameter(prefix + ".skip.kernel", {width(l), in, 1, 1});
        level.skip_bias = store_.add_parameter(prefix + ".skip.bias", {width(l)});
      }
      level.down = ConvBn<T>::create(store_, prefix + ".down", width(l), width(l), 3, 2, 1);
    }
    encoder_.push_back(std::move(level));
    in = width(l);
  }

  for (int l = 0; l < n; ++l) {
    const auto& lc = config_.levels[l];
    const std::string prefix = "lateral" + std::to_string(l + 1);
    Lateral lat;
    if (lc.recurrent) {
      lat.lstm = ConvLstmParams<T>::create(store_, prefix + ".lstm", width(l), lc.lstm_channels);
      if (lc.lstm_channels != width(l)) {
        lat.proj_kernel = store_.add_parameter(prefix + ".proj.kernel", {width(l), lc.lstm_channels, 1, 1});
        lat.proj_bias = store_.add_parameter(prefix + ".proj.bias", {width(l)});
      }
    }
    laterals_.push_back(std::move(lat));
  }

  decoder_.resize(n);
  for (int l = n - 1; l >= 0; --l) {
    const auto& lc = config_.levels[l];
    const std::string prefix = "decoder.level" + std::to_string(l + 1);
    if (lc.recurrent || lc.feedforward) {
      const int above = l == n - 1 ? 0 : width(l);
      laterals_[l].merge = MergeParams<T>::create(store_, prefix + ".merge", above,
                                                  lc.recurrent ? width(l) : 0,
                                                  lc.feedforward ? width(l) : 0, width(l));
    }
    auto& level = decoder_[l];
    if (!residual) {
      if (l > 0) level.convs.push_back(ConvBn<T>::create(store_, prefix + ".conv", width(l), width(l - 1), 3, 1, 1));
    } else {
      const int out = l > 0 ? width(l - 1) : width(0);
      level.convs.push_back(ConvBn<T>::create(store_, prefix + ".conv1", width(l), out, 3, 1, 1));
      level.convs.push_back(ConvBn<T>::create(store_, prefix + ".conv2", out, out, 3, 1, 1));
      if (out != width(l)) {
        level.skip_kernel = store_.add_parameter(prefix + ".skip.kernel", {out, width(l), 1, 1});
        level.skip_bias = store_.add_parameter(prefix + ".skip.bias", {out});
      }
    }
  }
  output_kernel_ = store_.add_parameter("decoder.output.kernel", {1, width(0), 3, 3});
  output_bias_ = store_.add_parameter("decoder.output.bias", {1});
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
void VideoLadderNet<T>::initialize(std::uint64_t seed) {
  for (const auto& p : store_.parameters()) {
    auto tensor = p.tensor;
    auto values = tensor.mutable_values();
    const auto& shape = p.tensor.shape();
    if (shape.size() == 4) {
      const double std = std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2] * shape[3]));
      CounterRng rng(CounterRng::derive(seed, {fnv1a64(p.name.data(), p.name.size())}));
      for (auto& v : values) {
        double x;
        do x = rng.normal(); while (std::abs(x) > 2.0);
        v = static_cast<T>(x * std);
      }
    } else if (ends_with(p.name, ".bn.scale")) {
      std::fill(values.begin(), values.end(), T(1));
    } else if (ends_with(p.name, ".b_f")) {
      std::fill(values.begin(), values.end(), static_cast<T>(config_.forget_bias));
    } else {
      std::fill(values.begin(), values.end(), T(0));
    }
  }
  for (const auto& b : store_.buffers()) {
    auto tensor = b.tensor;
    auto values = tensor.mutable_values();
    std::fill(values.begin(), values.end(), ends_with(b.name, ".running_var") ? T(1) : T(0));
  }
}

template <typename T>
typename VideoLadderNet<T>::States VideoLadderNet<T>::initial_states(std::int64_t batch) const {
  States states;
  for (int l = 0; l < config_.num_levels(); ++l) {
    const auto& lc = config_.levels[l];
    if (!lc.recurrent) continue;
    const int s = config_.level_size(l + 1);
    states.push_back(State::zeros(batch, lc.lstm_channels, s, s));
  }
  return states;
}

template <typename T>
Tensor<T> VideoLadderNet<T>::run_encoder_level(int l, const Tensor<T>& x, BatchNormMode mode) const {
  const auto& level = encoder_[l];
  const double slope = config_.leaky_slope;
  if (!level.down) return level.convs[0].forward(x, mode, bn_, slope);
  auto branch = x;
  for (const auto& conv : level.convs) branch = conv.forward(branch, mode, bn_, slope);
  const auto skip = level.skip_kernel.defined() ? conv2d(x, level.skip_kernel, level.skip_bias) : x;
  return level.down->forward(add(branch, skip), mode, bn_, slope);
}

template <typename T>
Tensor<T> VideoLadderNet<T>::run_decoder_level(int l, const Tensor<T>& x, BatchNormMode mode) const {
  const auto& level = decoder_[l];
  const double slope = config_.leaky_slope;
  auto y = x;
  for (const auto& conv : level.convs) y = conv.forward(y, mode, bn_, slope);
  if (config_.encoder == EncoderKind::kResidual) {
    y = add(y, level.skip_kernel.defined() ? conv2d(x, level.skip_kernel, level.skip_bias) : x);
  }
  return y;
}

template <typename T>
std::vector<Tensor<T>> VideoLadderNet<T>::encode(const Tensor<T>& frame, BatchNormMode mode,
                                                 ShapeTrace* trace) const {
  const Shape expected{frame.rank() == 4 ? frame.dim(0) : 0, 1, config_.input_size, config_.input_size};
  if (frame.rank() != 4 || frame.shape() != expected || frame.dim(0) < 1) {
    throw ShapeError("model input " + shape_str(frame.shape()) + " is not [N, 1, " +
                     std::to_string(config_.input_size) + ", " + std::to_string(config_.input_size) + "]");
  }
  if (trace) trace->push_back({"input", frame.shape()});
  std::vector<Tensor<T>> z;
  auto x = frame;
  for (int l = 0; l < config_.num_levels(); ++l) {
    x = run_encoder_level(l, x, mode);
    if (trace) trace->push_back({"encoder.z" + std::to_string(l + 1), x.shape()});
    z.push_back(x);
  }
  return z;
}

template <typename T>
typename VideoLadderNet<T>::StepResult VideoLadderNet<T>::step(const Tensor<T>& frame,
                                                               const States& states,
                                                               BatchNormMode mode,
                                                               ShapeTrace* trace) const {
  if (static_cast<int>(states.size()) != config_.recurrent_count()) {
    throw std::invalid_argument("model step: got " + std::to_string(states.size()) +
                                " lateral states, the model has " +
                                std::to_string(config_.recurrent_count()) + " recurrent levels");
  }
  const auto z = encode(frame, mode, trace);
  const int n = config_.num_levels();
  StepResult result;
  result.states = states;
  std::vector<int> state_index(n, -1);
  for (int l = 0, k = 0; l < n; ++l) {
    if (config_.levels[l].recurrent) state_index[l] = k++;
  }

  const double slope = config_.leaky_slope;
  Tensor<T> above;
  for (int l = n - 1; l >= 0; --l) {
    const auto& lc = config_.levels[l];
    const auto& lat = laterals_[l];
    const std::string tag = std::to_string(l + 1);
    Tensor<T> h;
    if (lat.lstm) {
      auto next = convlstm_step(*lat.lstm, z[l], states[state_index[l]]);
      h = next.hidden;
      if (trace) {
        trace->push_back({"lateral" + tag + ".h", next.hidden.shape()});
        trace->push_back({"lateral" + tag + ".c", next.cell.shape()});
      }
      result.states[state_index[l]] = std::move(next);
      if (lat.proj_kernel.defined()) {
        h = conv2d(h, lat.proj_kernel, lat.proj_bias);
        if (trace) trace->push_back({"lateral" + tag + ".proj", h.shape()});
      }
    }
    auto merged = lat.merge ? lateral_merge(*lat.merge, above, h, lc.feedforward ? z[l] : Tensor<T>(), slope)
                            : above;
    if (trace) trace->push_back({"decoder.merge" + tag, merged.shape()});
    auto up = upsample_nearest(merged, 2);
    if (trace) trace->push_back({"decoder.up" + tag, up.shape()});
    above = run_decoder_level(l, up, mode);
    if (trace) trace->push_back({"decoder.out" + tag, above.shape()});
  }
  result.prediction = sigmoid(conv2d(above, output_kernel_, output_bias_));
  if (trace) trace->push_back({"prediction", result.prediction.shape()});
  return result;
}

template <typename T>
typename VideoLadderNet<T>::States VideoLadderNet<T>::advance(const Tensor<T>& frame, const States& states,
                                                              BatchNormMode mode) const {
  if (static_cast<int>(states.size()) != config_.recurrent_count()) {
    throw std::invalid_argument("model advance: got " + std::to_string(states.size()) +
                                " lateral states, the model has " +
                                std::to_string(config_.recurrent_count()) + " recurrent levels");
  }
  const auto z = encode(frame, mode);
  States next = states;
  for (int l = 0, k = 0; l < config_.num_levels(); ++l) {
    if (!laterals_[l].lstm) continue;
    next[k] = convlstm_step(*laterals_[l].lstm, z[l], states[k]);
    ++k;
  }
  return next;
}

template <typename T>
std::string VideoLadderNet<T>::describe() const {
  std::ostringstream out;
  out << "variant " << variant_name(config_.variant) << '\n';
  for (const auto& p : store_.parameters()) {
    out << p.name << ' ' << shape_str(p.tensor.shape()) << ' ' << p.tensor.numel() << '\n';
  }
  out << "total " << parameter_count() << '\n';
  return out.str();
}

template class VideoLadderNet<float>;
template class VideoLadderNet<double>;

}  // namespace vln::model
