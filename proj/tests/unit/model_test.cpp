#include <gtest/gtest.h>

#include <cmath>

#include "support/model_oracles.hpp"
#include "support/op_gradients.hpp"
#include "vln/model/ladder_net.hpp"

namespace vln::model {
namespace {

using testing::random_tensor;

constexpr Variant kAllVariants[] = {Variant::kVln, Variant::kVlnResnet, Variant::kVlnBl, Variant::kVlnBlFf};

template <typename T>
ConvLstmParams<T> random_lstm(ParameterStore<T>& store, int in, int hidden, CounterRng& rng,
                              double scale = 0.5) {
  auto p = ConvLstmParams<T>::create(store, "lstm", in, hidden);
  for (auto& e : store.parameters()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-scale, scale));
  }
  return p;
}

double max_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(OpGradients, EveryOpInBothPrecisions) {
  for (const auto& r : testing::all_op_gradient_checks(40)) {
    EXPECT_GE(r.checked, 20u) << r.name;
    EXPECT_LT(r.double_max_rel, 1e-5) << r.name;
    EXPECT_LT(r.float_max_rel, 1e-3) << r.name;
  }
}

TEST(ConvLstm, MatchesPerPixelLoop) {
  CounterRng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int cin = 1 + trial % 3, ch = 1 + (trial / 3) % 3, h = 3 + trial % 4, w = 2 + trial % 5;
    ParameterStore<double> store;
    auto p = random_lstm(store, cin, ch, rng);
    auto z = random_tensor<double>({2, cin, h, w}, rng);
    ConvLstmState<double> state{random_tensor<double>({2, ch, h, w}, rng),
                                random_tensor<double>({2, ch, h, w}, rng), false};
    if (trial % 5 == 0) state = ConvLstmState<double>::zeros(2, ch, h, w);
    const auto next = convlstm_step(p, z, state);
    auto vec = [](const Tensor<double>& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    const auto ref = testing::convlstm_reference(p, vec(z), vec(state.hidden), vec(state.cell), 2, h, w);
    EXPECT_LT(max_abs_diff(next.hidden.values(), ref.h), 1e-12) << trial;
    EXPECT_LT(max_abs_diff(next.cell.values(), ref.c), 1e-12) << trial;
  }
}

TEST(ConvLstm, ZeroWeightsGiveZeroOutput) {
  ParameterStore<double> store;
  auto p = ConvLstmParams<double>::create(store, "lstm", 3, 2);
  CounterRng rng(2);
  auto z = random_tensor<double>({1, 3, 4, 4}, rng);
  auto next = convlstm_step(p, z, ConvLstmState<double>::zeros(1, 2, 4, 4));
  for (double v : next.hidden.values()) EXPECT_EQ(v, 0.0);
  for (double v : next.cell.values()) EXPECT_EQ(v, 0.0);
  // With a prior cell the forget gate is 0.5.
  auto prior = random_tensor<double>({1, 2, 4, 4}, rng);
  next = convlstm_step(p, z, {Tensor<double>::zeros({1, 2, 4, 4}), prior, false});
  for (std::size_t i = 0; i < prior.values().size(); ++i) {
    EXPECT_DOUBLE_EQ(next.cell.values()[i], 0.5 * prior.values()[i]);
    EXPECT_DOUBLE_EQ(next.hidden.values()[i], 0.5 * std::tanh(0.5 * prior.values()[i]));
  }
}

TEST(ConvLstm, SaturatedGatesPassCellThrough) {
  ParameterStore<double> store;
  auto p = ConvLstmParams<double>::create(store, "lstm", 2, 2);
  for (int g : {kInputGate, kForgetGate, kOutputGate}) {
    auto b = p.bias[g];
    for (auto& v : b.mutable_values()) v = 40.0;
  }
  CounterRng rng(5);
  auto prior = random_tensor<double>({1, 2, 3, 3}, rng, -2, 2);
  auto next = convlstm_step(p, random_tensor<double>({1, 2, 3, 3}, rng),
                            {random_tensor<double>({1, 2, 3, 3}, rng), prior, false});
  for (std::size_t i = 0; i < prior.values().size(); ++i) {
    EXPECT_NEAR(next.cell.values()[i], prior.values()[i], 1e-12);
    EXPECT_NEAR(next.hidden.values()[i], std::tanh(prior.values()[i]), 1e-12);
  }
}

TEST(ConvLstm, RejectsChannelMismatch) {
  ParameterStore<float> store;
  auto p = ConvLstmParams<float>::create(store, "lstm", 3, 2);
  EXPECT_THROW(convlstm_step(p, Tensor<float>::zeros({1, 4, 4, 4}), ConvLstmState<float>::zeros(1, 2, 4, 4)),
               ShapeError);
  EXPECT_THROW(convlstm_step(p, Tensor<float>::zeros({1, 3, 4, 4}), ConvLstmState<float>::zeros(1, 2, 5, 4)),
               ShapeError);
}

TEST(ConvLstm, HiddenStaysInsideUnitInterval) {
  CounterRng rng(8);
  ParameterStore<double> store;
  auto p = random_lstm(store, 2, 3, rng, 2.0);
  auto state = ConvLstmState<double>::zeros(1, 3, 4, 4);
  double prev_bound = 0;
  for (int t = 0; t < 30; ++t) {
    state = convlstm_step(p, random_tensor<double>({1, 2, 4, 4}, rng, -3, 3), state);
    double cmax = 0;
    for (double v : state.hidden.values()) ASSERT_LT(std::abs(v), 1.0);
    for (double v : state.cell.values()) cmax = std::max(cmax, std::abs(v));
    ASSERT_LE(cmax, prev_bound + 1.0 + 1e-12);
    prev_bound = cmax;
  }
}

TEST(ConvLstm, GradientsMatchFiniteDifferences) {
  CounterRng rng(12);
  ParameterStore<double> store;
  auto p = random_lstm(store, 2, 2, rng);
  auto z = random_tensor<double>({2, 2, 3, 4}, rng);
  auto h = random_tensor<double>({2, 2, 3, 4}, rng);
  auto c = random_tensor<double>({2, 2, 3, 4}, rng);
  std::vector<Tensor<double>> leaves{z, h, c};
  for (const auto& e : store.parameters()) leaves.push_back(e.tensor);
  auto res = testing::check_gradients(leaves, [&] {
    auto next = convlstm_step(p, z, {h, c, false});
    return add(testing::random_projection(next.hidden, 1), testing::random_projection(next.cell, 2));
  });
  EXPECT_LT(res.max_rel_error, 1e-5);
}

MergeParams<double> identity_merge(ParameterStore<double>& store, int above, int rec, int ff, int out) {
  auto m = MergeParams<double>::create(store, "merge", above, rec, ff, out);
  auto wh = m.w_h, wz = m.w_z;
  for (int o = 0; o < out; ++o) {
    wh.mutable_values()[o * (above + rec) + o] = 1.0;
    wz.mutable_values()[o * (out + ff) + o] = 1.0;
  }
  return m;
}

TEST(LateralMerge, IdentityKernelsRouteDecoderInput) {
  ParameterStore<double> store;
  auto m = identity_merge(store, 3, 3, 3, 3);
  CounterRng rng(1);
  auto above = random_tensor<double>({2, 3, 4, 4}, rng, 0.1, 2);
  auto h = random_tensor<double>({2, 3, 4, 4}, rng, 0.1, 2);
  auto z = random_tensor<double>({2, 3, 4, 4}, rng, 0.1, 2);
  auto out = lateral_merge(m, above, h, z, 0.01);
  ASSERT_EQ(out.shape(), above.shape());
  for (std::size_t i = 0; i < out.values().size(); ++i) EXPECT_DOUBLE_EQ(out.values()[i], above.values()[i]);
}

TEST(LateralMerge, MatchesDirectFormulaOnOnePixel) {
  ParameterStore<double> store;
  auto m = MergeParams<double>::create(store, "merge", 2, 1, 1, 2);
  CounterRng rng(4);
  for (auto& e : store.parameters()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_values()) v = rng.uniform(-1, 1);
  }
  const double slope = 0.01;
  auto lrelu = [&](double v) { return v > 0 ? v : slope * v; };
  auto above = random_tensor<double>({1, 2, 1, 1}, rng);
  auto h = random_tensor<double>({1, 1, 1, 1}, rng);
  auto z = random_tensor<double>({1, 1, 1, 1}, rng);
  const double in1[3] = {above.values()[0], above.values()[1], h.values()[0]};
  double mid[2];
  for (int o = 0; o < 2; ++o) {
    double acc = m.b_h.values()[o];
    for (int i = 0; i < 3; ++i) acc += m.w_h.values()[o * 3 + i] * in1[i];
    mid[o] = lrelu(acc);
  }
  const double in2[3] = {mid[0], mid[1], z.values()[0]};
  auto out = lateral_merge(m, above, h, z, slope);
  for (int o = 0; o < 2; ++o) {
    double acc = m.b_z.values()[o];
    for (int i = 0; i < 3; ++i) acc += m.w_z.values()[o * 3 + i] * in2[i];
    EXPECT_NEAR(out.values()[o], lrelu(acc), 1e-14);
  }
}

TEST(LateralMerge, ZeroInputsWithNegativeBiases) {
  ParameterStore<double> store;
  auto m = identity_merge(store, 1, 1, 1, 1);
  for (auto* b : {&m.b_h, &m.b_z}) {
    auto t = *b;
    t.mutable_values()[0] = -1.0;
  }
  auto zero = Tensor<double>::zeros({1, 1, 1, 1});
  auto out = lateral_merge(m, zero, zero, zero, 0.01);
  // inner: lrelu(-1) = -0.01; outer: lrelu(1 * -0.01 - 1) = 0.01 * -1.01
  EXPECT_NEAR(out.item(), -0.0101, 1e-15);
}

TEST(LateralMerge, AbsentOperandsAndMisalignment) {
  ParameterStore<double> store;
  auto top = MergeParams<double>::create(store, "top", 0, 4, 4, 4);
  EXPECT_EQ(top.w_h.shape(), (Shape{4, 4, 1, 1}));
  EXPECT_EQ(top.w_z.shape(), (Shape{4, 8, 1, 1}));
  CounterRng rng(2);
  auto h = random_tensor<double>({1, 4, 2, 2}, rng);
  EXPECT_EQ(lateral_merge(top, Tensor<double>(), h, h, 0.01).shape(), (Shape{1, 4, 2, 2}));
  auto bad = random_tensor<double>({1, 4, 3, 2}, rng);
  EXPECT_THROW(lateral_merge(top, Tensor<double>(), h, bad, 0.01), ShapeError);
  EXPECT_THROW(lateral_merge(top, Tensor<double>(), Tensor<double>(), h, 0.01), std::invalid_argument);
}

TEST(LateralMerge, GradientsMatchFiniteDifferences) {
  ParameterStore<double> store;
  auto m = MergeParams<double>::create(store, "merge", 2, 3, 2, 2);
  CounterRng rng(9);
  for (auto& e : store.parameters()) {
    auto t = e.tensor;
    for (auto& v : t.mutable_values()) v = rng.uniform(-1, 1);
  }
  auto above = random_tensor<double>({2, 2, 3, 3}, rng);
  auto h = random_tensor<double>({2, 3, 3, 3}, rng);
  auto z = random_tensor<double>({2, 2, 3, 3}, rng);
  std::vector<Tensor<double>> leaves{m.w_h, m.b_h, m.w_z, m.b_z, above, h, z};
  auto res = testing::check_gradients(leaves, [&] {
    return testing::random_projection(lateral_merge(m, above, h, z, 0.2), 3);
  });
  EXPECT_LT(res.max_rel_error, 1e-5);
}

TEST(ModelConfig, PresetsMatchLayerDescription) {
  auto vln = ModelConfig::preset(Variant::kVln);
  ASSERT_EQ(vln.num_levels(), 3);
  EXPECT_EQ(vln.levels[0].channels, std::vector<int>{32});
  EXPECT_EQ(vln.levels[2].dilations, std::vector<int>{4});
  auto res = ModelConfig::preset(Variant::kVlnResnet);
  EXPECT_EQ(res.encoder, EncoderKind::kResidual);
  EXPECT_EQ(res.levels[1].channels, (std::vector<int>{58, 58}));
  EXPECT_EQ(res.levels[2].dilations, (std::vector<int>{4, 8}));
  auto bl = ModelConfig::preset(Variant::kVlnBl);
  EXPECT_EQ(bl.recurrent_count(), 1);
  EXPECT_EQ(bl.levels[2].lstm_channels, 128);
  for (const auto& l : bl.levels) EXPECT_FALSE(l.feedforward);
  auto ff = ModelConfig::preset(Variant::kVlnBlFf);
  for (const auto& l : ff.levels) EXPECT_TRUE(l.feedforward);
  // Each step up adds connections without removing any.
  for (int l = 0; l < 3; ++l) {
    EXPECT_LE(bl.levels[l].recurrent + bl.levels[l].feedforward, ff.levels[l].recurrent + ff.levels[l].feedforward);
    EXPECT_LE(ff.levels[l].recurrent + ff.levels[l].feedforward, vln.levels[l].recurrent + vln.levels[l].feedforward);
  }
}

TEST(ModelConfig, TextRoundTripAndHash) {
  for (auto v : kAllVariants) {
    const auto cfg = ModelConfig::preset(v);
    const auto again = ModelConfig::from_text(cfg.to_text());
    EXPECT_EQ(again.to_text(), cfg.to_text());
    EXPECT_EQ(again.hash(), cfg.hash());
  }
  EXPECT_NE(ModelConfig::preset(Variant::kVln).hash(), ModelConfig::preset(Variant::kVlnBl).hash());
  auto cfg = ModelConfig::from_text("[model]\nvariant = vln\nleaky_slope = 0.2\nchannels = 8 16 24\n");
  EXPECT_DOUBLE_EQ(cfg.leaky_slope, 0.2);
  EXPECT_EQ(cfg.levels[1].channels, std::vector<int>{16});
  EXPECT_THROW(ModelConfig::from_text("[model]\nvariant = vln-xl\n"), ConfigError);
  EXPECT_THROW(ModelConfig::from_text("[model]\nchannels = 8 16\n"), ConfigError);
  EXPECT_THROW(ModelConfig::from_text("[model]\ninput_size = 60\n"), ConfigError);
  EXPECT_THROW(parse_variant("VLN"), ConfigError);
}

TEST(VideoLadderNet, ParameterCountsNearReference) {
  const std::pair<Variant, double> targets[] = {
      {Variant::kVln, 1.2e6}, {Variant::kVlnResnet, 1.3e6}, {Variant::kVlnBl, 1.2e6}, {Variant::kVlnBlFf, 1.2e6}};
  for (auto [v, target] : targets) {
    VideoLadderNet<float> net(ModelConfig::preset(v));
    const double count = static_cast<double>(net.parameter_count());
    EXPECT_LE(std::abs(count - target) / target, 0.15) << variant_name(v) << " " << count;
    EXPECT_NE(net.describe().find("total " + std::to_string(net.parameter_count())), std::string::npos);
  }
}

TEST(VideoLadderNet, ShapeLadderForAllVariants) {
  for (auto v : kAllVariants) {
    VideoLadderNet<float> net(ModelConfig::preset(v));
    net.initialize(1);
    ShapeTrace trace;
    net.step(Tensor<float>::full({2, 1, 64, 64}, 0.5f), net.initial_states(2), BatchNormMode::kTrain, &trace);
    const auto expected = testing::expected_shape_ladder(v, 2);
    ASSERT_EQ(trace.size(), expected.size()) << variant_name(v);
    for (std::size_t i = 0; i < trace.size(); ++i) {
      EXPECT_EQ(trace[i].name, expected[i].name) << variant_name(v);
      EXPECT_EQ(trace[i].shape, expected[i].shape) << variant_name(v) << " " << trace[i].name;
    }
  }
}

TEST(VideoLadderNet, PredictionsAreProbabilitiesAndDeterministic) {
  CounterRng rng(3);
  for (auto v : kAllVariants) {
    VideoLadderNet<float> net(ModelConfig::reduced(v));
    net.initialize(9);
    auto frame = random_tensor<float>({3, 1, 16, 16}, rng, 0, 1, false);
    auto a = net.step(frame, net.initial_states(3), BatchNormMode::kTrain);
    auto b = net.step(frame, net.initial_states(3), BatchNormMode::kTrain);
    ASSERT_EQ(a.prediction.shape(), (Shape{3, 1, 16, 16}));
    for (std::size_t i = 0; i < a.prediction.values().size(); ++i) {
      ASSERT_GT(a.prediction.values()[i], 0.0f);
      ASSERT_LT(a.prediction.values()[i], 1.0f);
      ASSERT_EQ(a.prediction.values()[i], b.prediction.values()[i]);
    }
  }
}

TEST(VideoLadderNet, ZeroInputGivesFiniteFeatures) {
  VideoLadderNet<float> net(ModelConfig::preset(Variant::kVlnResnet));
  net.initialize(4);
  for (const auto& z : net.encode(Tensor<float>::zeros({1, 1, 64, 64}), BatchNormMode::kTrain)) {
    for (float v : z.values()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(VideoLadderNet, RejectsBadInputsAndStates) {
  VideoLadderNet<float> net(ModelConfig::reduced(Variant::kVln));
  net.initialize(1);
  EXPECT_THROW(net.step(Tensor<float>::zeros({1, 1, 8, 8}), net.initial_states(1), BatchNormMode::kTrain), ShapeError);
  EXPECT_THROW(net.step(Tensor<float>::zeros({1, 2, 16, 16}), net.initial_states(1), BatchNormMode::kTrain), ShapeError);
  auto states = net.initial_states(1);
  states.pop_back();
  EXPECT_THROW(net.step(Tensor<float>::zeros({1, 1, 16, 16}), states, BatchNormMode::kTrain), std::invalid_argument);
  EXPECT_THROW(net.step(Tensor<float>::zeros({2, 1, 16, 16}), net.initial_states(1), BatchNormMode::kTrain), ShapeError);
}

TEST(VideoLadderNet, ResetStateForgetsPreviousSequence) {
  CounterRng rng(6);
  VideoLadderNet<double> net(ModelConfig::reduced(Variant::kVln));
  net.initialize(2);
  auto frame = random_tensor<double>({2, 1, 16, 16}, rng, 0, 1, false);
  auto fresh = net.step(frame, net.initial_states(2), BatchNormMode::kTrain).prediction;
  auto states = net.initial_states(2);
  for (int t = 0; t < 4; ++t) states = net.step(random_tensor<double>({2, 1, 16, 16}, rng, 0, 1, false), states, BatchNormMode::kTrain).states;
  auto after = net.step(frame, net.initial_states(2), BatchNormMode::kTrain).prediction;
  EXPECT_EQ(std::vector<double>(fresh.values().begin(), fresh.values().end()),
            std::vector<double>(after.values().begin(), after.values().end()));
}

TEST(VideoLadderNet, ResidualZeroBranchReducesToSkipPath) {
  auto cfg = ModelConfig::preset(Variant::kVlnResnet);
  VideoLadderNet<double> net(cfg);
  net.initialize(5);
  for (const auto& e : net.store().parameters()) {
    if (e.name.find("encoder.") == 0 && e.name.find(".conv") != std::string::npos && e.name.find(".kernel") != std::string::npos) {
      auto t = e.tensor;
      std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    }
  }
  CounterRng rng(7);
  auto x = random_tensor<double>({2, 1, 64, 64}, rng, 0, 1, false);
  const auto z = net.encode(x, BatchNormMode::kTrain);
  const auto& store = net.store();
  auto input = x;
  for (int l = 1; l <= 3; ++l) {
    const std::string prefix = "encoder.level" + std::to_string(l);
    auto skip = store.find(prefix + ".skip.kernel")
                    ? conv2d(input, store.parameter(prefix + ".skip.kernel"), store.parameter(prefix + ".skip.bias"))
                    : input;
    Conv2dOptions down;
    down.stride = {2, 2};
    const auto c = store.parameter(prefix + ".down.kernel").dim(0);
    BatchNormBuffers<double> fresh{Tensor<double>::zeros({c}), Tensor<double>::full({c}, 1.0), Tensor<double>::zeros({1})};
    auto expected = leaky_relu(batch_norm(conv2d(skip, store.parameter(prefix + ".down.kernel"), Tensor<double>(), down),
                                          store.parameter(prefix + ".down.bn.scale"),
                                          store.parameter(prefix + ".down.bn.shift"), fresh, BatchNormMode::kTrain),
                               cfg.leaky_slope);
    ASSERT_EQ(expected.shape(), z[l - 1].shape());
    EXPECT_LT(max_abs_diff(z[l - 1].values(), std::vector<double>(expected.values().begin(), expected.values().end())), 1e-12);
    input = z[l - 1];
  }
}

// With identity leaky ReLU, feedforward kernels zeroed and identity merges
// at the lower levels, the feedforward baseline collapses to the plain one.
TEST(VideoLadderNet, FeedforwardBaselineWithZeroedLateralsEqualsBaseline) {
  auto bl_cfg = ModelConfig::preset(Variant::kVlnBl);
  auto ff_cfg = ModelConfig::preset(Variant::kVlnBlFf);
  bl_cfg.leaky_slope = ff_cfg.leaky_slope = 1.0;
  VideoLadderNet<double> bl(bl_cfg), ff(ff_cfg);
  bl.initialize(11);
  ff.initialize(12);
  testing::perturb(bl.store(), 13, 0.05);
  for (const auto& e : ff.store().all()) {
    auto dst = e.tensor;
    auto out = dst.mutable_values();
    std::fill(out.begin(), out.end(), 0.0);
    if (const auto* src = bl.store().find(e.name)) {
      if (src->shape() == dst.shape()) {
        std::copy(src->values().begin(), src->values().end(), out.begin());
        continue;
      }
      // Top merge W_z: BL consumes only the recurrent path; zero the z columns.
      ASSERT_EQ(e.name, "decoder.level3.merge.w_z");
      const auto rows = dst.dim(0), in_bl = src->dim(1), in_ff = dst.dim(1);
      for (std::int64_t o = 0; o < rows; ++o)
        for (std::int64_t i = 0; i < in_bl; ++i) out[o * in_ff + i] = src->values()[o * in_bl + i];
      continue;
    }
    if (e.name.find(".merge.w_") != std::string::npos) {
      const auto rows = dst.dim(0), cols = dst.dim(1);
      for (std::int64_t o = 0; o < rows; ++o) out[o * cols + o] = 1.0;
    }
  }
  CounterRng rng(14);
  auto sb = bl.initial_states(2), sf = ff.initial_states(2);
  for (int t = 0; t < 3; ++t) {
    auto frame = random_tensor<double>({2, 1, 64, 64}, rng, 0, 1, false);
    auto a = bl.step(frame, sb, BatchNormMode::kTrain);
    auto b = ff.step(frame, sf, BatchNormMode::kTrain);
    EXPECT_LT(max_abs_diff(a.prediction.values(), std::vector<double>(b.prediction.values().begin(), b.prediction.values().end())), 1e-10);
    sb = a.states;
    sf = b.states;
  }
}

TEST(VideoLadderNet, EndToEndGradientsOnReducedModels) {
  for (auto v : kAllVariants) {
    const auto r = testing::model_gradient_check(v, 17);
    EXPECT_LT(r.double_max_rel, 1e-5) << variant_name(v);
    EXPECT_LT(r.float_max_rel, 1e-3) << variant_name(v);
    EXPECT_GE(r.checked, 20u);
  }
}

}  // namespace
}  // namespace vln::model
