#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include <gtest/gtest.h>

#include "gelp/ad/grad_check.hpp"
#include "gelp/dsp/upsample.hpp"
#include "gelp/nn/models.hpp"
#include "oracles.hpp"

namespace {

using namespace gelp;
using namespace gelp::nn;
using Td = ad::Tensor<double>;

Td noise_tensor(ad::Shape s, std::uint64_t seed, double scale = 1.0) {
  return Td(s, oracle::white_noise(ad::numel(s), seed, scale));
}

Weights<double> zero_weights(const NetConfig& cfg) {
  auto w = init_weights<double>(cfg, 1);
  for (const auto& e : w.entries())
    if (e.trainable) std::fill(w[e.name].mutable_data().begin(), w[e.name].mutable_data().end(), 0.0);
  return w;
}

// Output steps reached by a NaN planted in the input: NaN survives every
// multiply and add, so its spread is exactly the dependency structure.
template <class F>
std::pair<std::size_t, std::size_t> nan_support(F&& forward, Td input, std::size_t index) {
  std::vector<double> v(input.data().begin(), input.data().end());
  v[index] = std::numeric_limits<double>::quiet_NaN();
  ad::testing::allow_non_finite() = true;
  const auto out = forward(Td(input.shape(), v));
  ad::testing::allow_non_finite() = false;
  std::size_t first = out.dim(1), last = 0;
  for (std::size_t t = 0; t < out.dim(1); ++t)
    for (std::size_t ch = 0; ch < out.dim(2); ++ch)
      if (std::isnan(out.at(0, t, ch))) {
        first = std::min(first, t);
        last = std::max(last, t);
      }
  return {first, last};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gelp_test_models_" + name);
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- configs and receptive fields ----------------------------------------------

TEST(Config, FullSizeReceptiveFields) {
  EXPECT_EQ(receptive_field(generator_config()), 3061u);
  EXPECT_EQ(receptive_field(discriminator_config()), 1525u);
  EXPECT_EQ(receptive_field(conditioner_config()), 121u);
  EXPECT_EQ(receptive_field(toy(discriminator_config())), 61u);
  EXPECT_EQ(generator_config().num_layers(), 24u);
  EXPECT_EQ(generator_config().dilation(7), 128u);
  EXPECT_EQ(generator_config().dilation(8), 1u);
}

TEST(Config, TextRoundTrip) {
  for (const auto& cfg : {generator_config(), discriminator_config(), conditioner_config(), toy(conditioner_config())}) {
    EXPECT_EQ(net_config_from_text(to_text(cfg)), cfg);
    EXPECT_EQ(net_config_from_text(to_text(cfg, "G."), "G."), cfg);
  }
  EXPECT_THROW(net_config_from_text("residual_channels=4\n"), FormatError);
  EXPECT_THROW(parse_count("x", "12a"), FormatError);
}

TEST(ReceptiveField, GeneratorImpulseSupport) {
  ad::NoGrad guard;
  const auto cfg = generator_config();
  const auto w = init_weights<double>(cfg, 3);
  const std::size_t len = 2 * receptive_field(cfg) + 200, centre = len / 2;
  const Td c(ad::Shape{1, len, cfg.conditioning_channels}, 0.1);
  const auto z = noise_tensor({1, len, 1}, 4);
  const auto [first, last] = nan_support([&](const Td& x) { return generator_forward(cfg, w, x, c); }, z, centre);
  EXPECT_EQ(last - first + 1, receptive_field(cfg));
  EXPECT_EQ(centre - first, (receptive_field(cfg) - 1) / 2);
}

TEST(ReceptiveField, DiscriminatorImpulseSupport) {
  ad::NoGrad guard;
  auto cfg = discriminator_config();
  const auto w = init_weights<double>(cfg, 5);
  const std::size_t rf = receptive_field(cfg), len = 2 * rf - 1;
  // The full stack accepts any length >= RF and emits len - RF + 1 scores.
  const Td c(ad::Shape{1, len, cfg.conditioning_channels}, 0.1);
  const auto x = noise_tensor({1, len, 1}, 6);
  ASSERT_EQ(stack_forward(cfg, w, x, std::optional<Td>(c)).dim(1), rf);
  const auto [first, last] =
      nan_support([&](const Td& in) { return stack_forward(cfg, w, in, std::optional<Td>(c)); }, x, rf - 1);
  EXPECT_EQ(first, 0u);
  EXPECT_EQ(last + 1, rf);
}

TEST(ReceptiveField, ConditionerImpulseSupport) {
  ad::NoGrad guard;
  const auto cfg = conditioner_config();
  const auto w = init_weights<double>(cfg, 7);
  const std::size_t frames = 301;
  const auto m = noise_tensor({1, frames, kMelChannels}, 8);
  const auto [first, last] =
      nan_support([&](const Td& in) { return conditioner_forward(cfg, w, in); }, m, 150 * kMelChannels + 3);
  EXPECT_EQ(last - first + 1, 121u);
}

// --- gated block and post-net ---------------------------------------------------

TEST(Block, ZeroWeightsPassResidualThrough) {
  auto cfg = toy(generator_config());
  const auto w = zero_weights(cfg);
  const auto x = noise_tensor({1, 20, 16}, 9);
  const auto c = noise_tensor({1, 20, 16}, 10);
  const auto out = gated_block(x, std::optional<Td>(c), w, "layer0.", 2, ad::Padding::same, true, false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(out.skip[i], 0.0);
    EXPECT_EQ(out.residual[i], x[i]);
  }
}

TEST(Block, ZeroOutputProjectionIsIdentityForAnyGates) {
  auto cfg = toy(generator_config());
  auto w = init_weights<double>(cfg, 11);
  std::fill(w["layer1.wo"].mutable_data().begin(), w["layer1.wo"].mutable_data().end(), 0.0);
  std::fill(w["layer1.bo"].mutable_data().begin(), w["layer1.bo"].mutable_data().end(), 0.0);
  const auto x = noise_tensor({2, 30, 16}, 12);
  const auto out = gated_block(x, std::optional<Td>(noise_tensor({2, 30, 16}, 13)), w, "layer1.", 2,
                               ad::Padding::same, true, false);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.residual[i], x[i]);
}

TEST(Block, NoConditioningWeightsMeansNoDependence) {
  auto cfg = toy(generator_config());
  auto w = init_weights<double>(cfg, 14);
  for (const char* name : {"layer0.vf", "layer0.vg"})
    std::fill(w[name].mutable_data().begin(), w[name].mutable_data().end(), 0.0);
  const auto x = noise_tensor({1, 25, 16}, 15);
  const auto a = gated_block(x, std::optional<Td>(noise_tensor({1, 25, 16}, 16)), w, "layer0.", 1, ad::Padding::same,
                             true, false);
  const auto b = gated_block(x, std::optional<Td>(noise_tensor({1, 25, 16}, 17)), w, "layer0.", 1, ad::Padding::same,
                             true, false);
  EXPECT_EQ(std::vector<double>(a.skip.data().begin(), a.skip.data().end()),
            std::vector<double>(b.skip.data().begin(), b.skip.data().end()));
}

TEST(Block, ValidPaddingShortensAndRejectsMismatchedContext) {
  auto cfg = toy(discriminator_config());
  const auto w = init_weights<double>(cfg, 18);
  const auto x = noise_tensor({1, 40, 16}, 19);
  const auto out = gated_block(x, std::optional<Td>(noise_tensor({1, 24, 16}, 20)), w, "layer2.", 4,
                               ad::Padding::valid, false, false);
  EXPECT_EQ(out.skip.dim(1), 24u);
  EXPECT_THROW(gated_block(x, std::optional<Td>(noise_tensor({1, 40, 16}, 20)), w, "layer2.", 4, ad::Padding::valid,
                           false, false),
               InvalidArgument);
}

TEST(Postnet, IdentityAffinesGiveTanh) {
  const auto h = noise_tensor({1, 6, 3}, 21);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  const Td w({1, 3, 3}, eye), b({1, 1, 3}, 0.0);
  const auto y = postnet<double>({h}, w, b, w, b);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(y[i], std::tanh(h[i]), 1e-15);
  EXPECT_THROW(postnet<double>({}, w, b, w, b), InvalidArgument);
}

TEST(Postnet, SkipOrderIsIrrelevantWithPermutedWeights) {
  const auto h0 = noise_tensor({1, 8, 2}, 22), h1 = noise_tensor({1, 8, 2}, 23);
  const auto w1 = noise_tensor({1, 4, 3}, 24), b1 = noise_tensor({1, 1, 3}, 25);
  const auto w2 = noise_tensor({1, 3, 1}, 26), b2 = noise_tensor({1, 1, 1}, 27);
  std::vector<double> swapped(w1.data().begin(), w1.data().end());
  std::rotate(swapped.begin(), swapped.begin() + 6, swapped.end());
  const auto a = postnet<double>({h0, h1}, w1, b1, w2, b2);
  const auto b = postnet<double>({h1, h0}, Td(w1.shape(), swapped), b1, w2, b2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  // Same as the affine of an explicit concatenation.
  const auto cat = ad::concat_channels<double>({h0, h1});
  const auto ref = ad::conv1d(ad::tanh(ad::conv1d(cat, w1, b1, 1, ad::Padding::same)), w2, b2, 1, ad::Padding::same);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], ref[i], 1e-14);
}

// --- networks ------------------------------------------------------------------

TEST(Generator, ZeroWeightsLengthAndNonDegeneracy) {
  const auto cfg = toy(generator_config());
  const Td c = noise_tensor({1, 400, 16}, 28);
  EXPECT_EQ(generator_forward(cfg, zero_weights(cfg), noise_tensor({1, 400, 1}, 29), c).data()[17], 0.0);
  const auto w = init_weights<double>(cfg, 30);
  for (std::size_t len : {80, 160, 400}) {
    const auto y = generator_forward(cfg, w, noise_tensor({1, len, 1}, 31), ad::slice_time(c, 0, len));
    EXPECT_EQ(y.shape(), (ad::Shape{1, len, 1}));
  }
  const auto a = generator_forward(cfg, w, noise_tensor({1, 400, 1}, 32), c);
  const auto b = generator_forward(cfg, w, noise_tensor({1, 400, 1}, 33), c);
  double dist = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(dist, 0.0);
  EXPECT_THROW(generator_forward(cfg, w, noise_tensor({1, 400, 1}, 32), ad::slice_time(c, 0, 300)), InvalidArgument);
}

TEST(Conditioner, ConstantInputGivesConstantInterior) {
  const auto cfg = conditioner_config();
  const auto w = init_weights<double>(cfg, 34);
  const Td m(ad::Shape{1, 300, kMelChannels}, -2.0);
  const auto e = conditioner_forward(cfg, w, m);
  ASSERT_EQ(e.shape(), (ad::Shape{1, 300, kContextChannels}));
  const std::size_t half = (receptive_field(cfg) - 1) / 2;
  for (std::size_t t = half + 1; t + half < 300; ++t)
    for (std::size_t ch = 0; ch < kContextChannels; ++ch) EXPECT_NEAR(e.at(0, t, ch), e.at(0, half, ch), 1e-12);
  const auto z = conditioner_forward(cfg, zero_weights(cfg), m);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conditioner, NormalizationBuffersStandardizeInput) {
  auto cfg = toy(conditioner_config());
  auto w = init_weights<double>(cfg, 35);
  const auto m = noise_tensor({1, 10, kMelChannels}, 36);
  const auto base = conditioner_forward(cfg, w, m);
  std::fill(w["norm.mean"].mutable_data().begin(), w["norm.mean"].mutable_data().end(), 0.5);
  std::fill(w["norm.std"].mutable_data().begin(), w["norm.std"].mutable_data().end(), 2.0);
  std::vector<double> shifted(m.data().begin(), m.data().end());
  for (auto& v : shifted) v = 2.0 * v + 0.5;
  const auto moved = conditioner_forward(cfg, w, Td(m.shape(), shifted));
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], moved[i], 1e-12);
  EXPECT_FALSE(w.entry("norm.std").trainable);
}

TEST(Discriminator, ScoresCropsAndRejectsWrongLengths) {
  const auto cfg = discriminator_config();
  const auto w = init_weights<double>(cfg, 37);
  const std::size_t rf = receptive_field(cfg);
  const auto x = noise_tensor({2, rf, 1}, 38, 5.0);
  const auto c = noise_tensor({2, rf, kContextChannels}, 39);
  const auto s = discriminator_forward(cfg, w, x, c);
  EXPECT_EQ(s.shape(), (ad::Shape{2, 1, 1}));
  EXPECT_THROW(discriminator_forward(cfg, w, noise_tensor({1, rf - 1, 1}, 40), noise_tensor({1, rf - 1, 64}, 41)),
               InvalidArgument);
  const auto z = discriminator_forward(cfg, zero_weights(cfg), x, c);
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(Discriminator, ScoreIsUnbounded) {
  auto cfg = toy(discriminator_config());
  auto w = init_weights<double>(cfg, 42);
  const std::size_t rf = receptive_field(cfg);
  const auto x = noise_tensor({1, rf, 1}, 43);
  const auto c = noise_tensor({1, rf, 16}, 44);
  const double s = discriminator_forward(cfg, w, x, c).item();
  for (auto& v : w["post.w2"].mutable_data()) v *= 1000.0;
  for (auto& v : w["post.b2"].mutable_data()) v *= 1000.0;
  EXPECT_NEAR(discriminator_forward(cfg, w, x, c).item(), 1000.0 * s, 1e-9 * std::abs(s) * 1000.0);
}

TEST(Networks, GradientsMatchFiniteDifferences) {
  const auto gcfg = toy(generator_config()), dcfg = toy(discriminator_config());
  auto gw = init_weights<double>(gcfg, 45);
  auto dw = init_weights<double>(dcfg, 46);
  const std::size_t rf = receptive_field(dcfg);
  const auto z = noise_tensor({1, rf, 1}, 47);
  auto c = Td::parameter({1, rf, 16}, oracle::white_noise(rf * 16, 48));
  std::vector<ad::NamedParameter> ps{{"c", c}};
  for (const char* name : {"layer3.wf", "layer0.vg", "post.w1", "input.b"}) ps.push_back({std::string("G/") + name, gw[name]});
  for (const char* name : {"layer2.wg", "layer3.vf", "post.b2"}) ps.push_back({std::string("D/") + name, dw[name]});
  auto f = [&] { return ad::sum(discriminator_forward(dcfg, dw, generator_forward(gcfg, gw, z, c), c)); };
  EXPECT_LT(ad::grad_check(f, ps, 1e-4), 1e-4);
}

TEST(Upsample, TensorPathMatchesSignalPath) {
  const auto frames = noise_tensor({1, 6, 3}, 49);
  dsp::RealFrames<double> f(6, 3);
  for (int k = 0; k < 6; ++k)
    for (int ch = 0; ch < 3; ++ch) f(k, ch) = frames.at(0, k, ch);
  const auto ref = dsp::upsample_linear(f, 80);
  const auto up = upsample(frames, 80, 400);
  for (std::size_t t = 0; t < 400; ++t)
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_NEAR(up.at(0, t, ch), ref(Eigen::Index(t), Eigen::Index(ch)), 1e-15);
}

// --- weights --------------------------------------------------------------------

TEST(WeightsFile, SameSeedSameWeightsAndByteIdenticalResave) {
  const auto cfg = toy(discriminator_config());
  const auto a = init_weights<float>(cfg, 50), b = init_weights<float>(cfg, 50), c = init_weights<float>(cfg, 51);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ta = a.entries()[i].tensor;
    EXPECT_TRUE(std::equal(ta.data().begin(), ta.data().end(), b.entries()[i].tensor.data().begin()));
    differs = differs || !std::equal(ta.data().begin(), ta.data().end(), c.entries()[i].tensor.data().begin());
  }
  EXPECT_TRUE(differs);

  const auto p1 = temp_path("a.gelpw"), p2 = temp_path("b.gelpw");
  save_weights(p1, cfg, a);
  const auto [cfg2, loaded] = load_weights<float>(p1);
  EXPECT_EQ(cfg2, cfg);
  save_weights(p2, cfg2, loaded);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(WeightsFile, DoublePrecisionRoundTripIsExact) {
  const auto cfg = toy(conditioner_config());
  const auto w = init_weights<double>(cfg, 52);
  const auto p = temp_path("d.gelpw");
  save_weights(p, cfg, w);
  const auto [cfg2, back] = load_weights<double>(p);
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_TRUE(std::equal(w.entries()[i].tensor.data().begin(), w.entries()[i].tensor.data().end(),
                           back.entries()[i].tensor.data().begin()));
  std::filesystem::remove(p);
}

TEST(WeightsFile, MismatchesAndCorruptionAreDiagnosed) {
  const auto cfg = toy(generator_config());
  const auto w = init_weights<float>(cfg, 53);
  const auto p = temp_path("e.gelpw");
  WeightArchive archive;
  append_weights(archive, w);
  write_archive(p, archive);
  auto bigger = cfg;
  bigger.residual_channels = 32;
  try {
    extract_weights<float>(read_archive(p), bigger);
    FAIL() << "expected a shape error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("input.w"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_weights<float>(p), FormatError);  // no CONF chunk
  {
    std::ofstream out(p, std::ios::binary);
    out << "GELPX";
  }
  EXPECT_THROW(read_archive(p), FormatError);
  {
    std::ofstream out(p, std::ios::binary);
    out.write("GELPW\x07\0\0\0", 9);
  }
  EXPECT_THROW(read_archive(p), FormatError);
  std::filesystem::remove(p);
  EXPECT_THROW(check_weights(init_weights<float>(toy(discriminator_config()), 1), cfg), FormatError);
}

}  // namespace
