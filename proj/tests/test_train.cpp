#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "gelp/train/trainer.hpp"
#include "oracles.hpp"

namespace {

using namespace gelp;
using namespace gelp::train;
namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("gelp_test_train_" + name); }

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <class T>
std::vector<T> snapshot(const std::vector<Param<T>>& params) {
  std::vector<T> v;
  for (const auto& p : params) v.insert(v.end(), p.tensor.data().begin(), p.tensor.data().end());
  return v;
}

template <class T>
std::vector<T> moments(const AdamState<T>& s) {
  std::vector<T> v;
  for (const auto& m : s.m) v.insert(v.end(), m.begin(), m.end());
  for (const auto& m : s.v) v.insert(v.end(), m.begin(), m.end());
  return v;
}

TrainConfig small_config() {
  TrainConfig c;
  c.segment_seconds = 0.05;
  c.pretrain_iters = 2;
  c.total_iters = 4;
  c.crops_per_iter = 4;
  c.seed = 7;
  return c;
}

template <class T>
std::vector<dsp::Waveform<T>> small_corpus() {
  return synthetic_corpus<T>(3, 0.3, 11);
}

// --- Adam ---------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  auto p = ad::Tensor<double>::parameter({1, 4, 1}, {0.5, -0.5, 1.0, 2.0});
  const std::vector<Param<double>> params{{"p", p}};
  auto state = AdamState<double>::zeros(params);
  const ad::Tensor<double> g({1, 4, 1}, std::vector<double>{0.3, -2.0, 1e-3, -1e-9});
  AdamConfig cfg;
  adam_step(params, {g}, state, cfg);
  const std::vector<double> start{0.5, -0.5, 1.0, 2.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = start[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p[i], expected, 1e-15);
  }
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroOrAbsentGradientLeavesParametersUnchanged) {
  auto p = ad::Tensor<double>::parameter({1, 3, 1}, {1.0, 2.0, 3.0});
  auto q = ad::Tensor<double>::parameter({1, 2, 1}, {4.0, 5.0});
  const std::vector<Param<double>> params{{"p", p}, {"q", q}};
  auto state = AdamState<double>::zeros(params);
  for (int i = 0; i < 3; ++i) adam_step(params, {ad::Tensor<double>({1, 3, 1}), std::nullopt}, state, AdamConfig{});
  EXPECT_EQ(snapshot(params), (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(Adam, IdenticalRunsGiveIdenticalTrajectories) {
  auto run = [] {
    auto p = ad::Tensor<double>::parameter({1, 16, 1}, oracle::white_noise(16, 1));
    const std::vector<Param<double>> params{{"p", p}};
    auto state = AdamState<double>::zeros(params);
    for (std::uint64_t k = 0; k < 20; ++k)
      adam_step(params, {ad::Tensor<double>({1, 16, 1}, oracle::white_noise(16, 100 + k))}, state, AdamConfig{});
    return snapshot(params);
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsMismatchedState) {
  auto p = ad::Tensor<double>::parameter({1, 3, 1}, {1.0, 2.0, 3.0});
  auto state = AdamState<double>::zeros({{"p", p}});
  auto other = ad::Tensor<double>::parameter({1, 2, 1}, {1.0, 2.0});
  EXPECT_THROW(adam_step<double>({{"p", other}}, {std::nullopt}, state, AdamConfig{}), InvalidArgument);
}

// --- config ---------------------------------------------------------------------

TEST(TrainConfigText, RoundTripsEveryField) {
  TrainConfig c;
  c.segment_seconds = 0.5;
  c.pretrain_iters = 3;
  c.total_iters = 9;
  c.crops_per_iter = 5;
  c.adam.lr = 3e-4;
  c.adam.beta1 = 0.5;
  c.adam.beta2 = 0.9;
  c.adam.eps = 1e-7;
  c.weights = {2.0, 3.0, 0.5};
  c.seed = 42;
  c.checkpoint_every = 4;
  const auto back = train_config_from_text(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.adam.lr, 3e-4);
  EXPECT_EQ(back.weights.lambda3, 0.5);
}

TEST(TrainConfigText, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.segment_samples(), 16000u);
  EXPECT_EQ(c.crops_per_iter, 32u);
  EXPECT_EQ(c.adam.lr, 1e-4);
  EXPECT_EQ(c.weights.lambda1, 10.0);
  EXPECT_EQ(c.weights.lambda2, 10.0);
  EXPECT_EQ(c.weights.lambda3, 1.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfigText, OverridesAndRejections) {
  TrainConfig c;
  apply_override(c, "lr=0.001");
  apply_override(c, "total_iters=10");
  apply_override(c, "model=toy");
  EXPECT_EQ(c.adam.lr, 0.001);
  EXPECT_EQ(c.total_iters, 10u);
  EXPECT_THROW(apply_override(c, "warmup=3"), FormatError);
  EXPECT_THROW(apply_override(c, "lr=fast"), FormatError);
  EXPECT_THROW(apply_override(c, "lr"), FormatError);
  EXPECT_THROW(apply_override(c, "model=huge"), FormatError);
  EXPECT_THROW(train_config_from_text("segment_seconds=0.0123\n"), InvalidArgument);
  EXPECT_THROW(train_config_from_text("pretrain_iters=10\ntotal_iters=5\n"), InvalidArgument);
  // Toy D sees 61 samples; 80 is the shortest admissible segment.
  EXPECT_NO_THROW(train_config_from_text("segment_seconds=0.005\n"));
  EXPECT_THROW(train_config_from_text("segment_seconds=0.005\nmodel=full\n"), InvalidArgument);
}

TEST(TrainConfigText, PhaseFlipsAtPretrainBoundary) {
  TrainConfig c;
  c.pretrain_iters = 500;
  EXPECT_EQ(c.phase(0), Phase::excitation);
  EXPECT_EQ(c.phase(499), Phase::excitation);
  EXPECT_EQ(c.phase(500), Phase::speech);
  EXPECT_EQ(c.phase(1999), Phase::speech);
}

// --- segments and crops -------------------------------------------------------------

TEST(Segments, LengthAndDeterminism) {
  const auto corpus = synthetic_corpus<double>(4, 1.5, 3);
  std::vector<std::size_t> lengths;
  for (const auto& w : corpus) lengths.push_back(w.samples.size());
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const auto sa = draw_segment(lengths, 16000, a), sb = draw_segment(lengths, 16000, b);
    EXPECT_EQ(sa.utterance, sb.utterance);
    EXPECT_EQ(sa.offset, sb.offset);
    const auto seg = cut_segment(corpus[sa.utterance], sa, 16000);
    ASSERT_EQ(seg.size(), 16000u);
    EXPECT_EQ(seg.front(), corpus[sa.utterance].samples[sa.offset]);
  }
}

TEST(Segments, OffsetsAreUniform) {
  // 10 equal bins over offsets 0..9999, 10k draws; 27.88 is the 0.999
  // quantile of chi-square with 9 degrees of freedom.
  const std::vector<std::size_t> lengths{16000 + 9999};
  std::mt19937_64 rng(123);
  std::vector<double> counts(10, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[draw_segment(lengths, 16000, rng).offset / 1000] += 1;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
  EXPECT_LT(chi2, 27.88);
}

TEST(Segments, ShortUtterancesAreReflectPadded) {
  dsp::Waveform<double> w;
  w.samples = {0, 1, 2, 3};
  const auto seg = cut_segment(w, SegmentSource{0, 0}, 10);
  EXPECT_EQ(seg, (std::vector<double>{0, 1, 2, 3, 2, 1, 0, 1, 2, 3}));
  std::mt19937_64 rng(1);
  EXPECT_EQ(draw_segment({4}, 10, rng).offset, 0u);
  EXPECT_THROW(draw_segment({}, 10, rng), InvalidArgument);
}

TEST(Segments, EmptyCorpusRejected) {
  const auto dir = temp_path("empty_corpus");
  fs::create_directories(dir);
  EXPECT_THROW(load_corpus<float>(dir), Error);
  EXPECT_THROW(load_corpus<float>(temp_path("no_such_dir")), Error);
  EXPECT_THROW(Trainer<float>(small_config(), {}), InvalidArgument);
  fs::remove_all(dir);
}

TEST(Crops, ThirtyTwoReceptiveFieldCrops) {
  std::mt19937_64 rng(9);
  const auto pos = crop_positions(32, 1525, 16000, rng);
  ASSERT_EQ(pos.size(), 32u);
  for (auto p : pos) EXPECT_LE(p + 1525, 16000u);
  const auto x = oracle::white_noise(16000, 2);
  const ad::Tensor<double> seg({1, 16000, 1}, x);
  const auto c = ad::linear_map(seg, crop_map<double>(pos, 1525, 16000));
  EXPECT_EQ(c.shape(), (ad::Shape{32, 1525, 1}));
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(c.at(i, 0, 0), x[pos[i]]);
    EXPECT_EQ(c.at(i, 1524, 0), x[pos[i] + 1524]);
  }
}

TEST(Crops, WholeSegmentDeterminismAndRejection) {
  std::mt19937_64 a(4), b(4);
  EXPECT_EQ(crop_positions(1, 800, 800, a), std::vector<std::size_t>{0});
  EXPECT_EQ(crop_positions(1, 800, 800, b), std::vector<std::size_t>{0});
  EXPECT_EQ(crop_positions(16, 61, 800, a), crop_positions(16, 61, 800, b));
  EXPECT_THROW(crop_positions(1, 801, 800, a), InvalidArgument);
}

// --- training iterations ------------------------------------------------------------

TEST(Iteration, ExcitationTargetIsTheInverseFilteredSegment) {
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(small_config(), corpus);
  auto s = trainer.initial_state();
  const auto x = trainer.next_segment(s);
  const auto seg = prepare_segment<double>(x, trainer.filterbank());
  const auto again = prepare_segment<double>(x, trainer.filterbank());
  EXPECT_EQ(seg.excitation, again.excitation);

  const auto mel = vocoder::extract_mel<double>(dsp::Waveform<double>{x, dsp::kDefaultSampleRate}, trainer.filterbank());
  const auto track = lpc::envelope_track_from_mel(mel, trainer.filterbank(), dsp::filter_stft_config());
  const auto xp = dsp::preemphasis<double>(x, dsp::kPreemphasis);
  EXPECT_EQ(seg.emphasized, xp);
  EXPECT_EQ(seg.excitation, lpc::inverse_filter<double>(xp, track, dsp::filter_stft_config()));
  const auto t = seg.target(Phase::excitation);
  EXPECT_TRUE(std::equal(t.begin(), t.end(), seg.excitation.begin()));
}

TEST(Iteration, StepsTouchOnlyTheirOwnParametersAndMoments) {
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(small_config(), corpus);
  auto s = trainer.initial_state();
  const auto seg = prepare_segment<double>(trainer.next_segment(s), trainer.filterbank());
  const auto draws = draw_iteration<double>(seg.length(), 4, nn::receptive_field(s.d_cfg), s.rng);

  const auto gc0 = snapshot(s.gc_params()), d0 = snapshot(s.d_params());
  const auto mgc0 = moments(s.adam_gc);
  loss::LossReport r;
  trainer.critic_step(s, seg, draws, r);
  EXPECT_EQ(snapshot(s.gc_params()), gc0);
  EXPECT_NE(snapshot(s.d_params()), d0);
  EXPECT_EQ(moments(s.adam_gc), mgc0);
  EXPECT_EQ(s.adam_gc.step, 0u);
  EXPECT_EQ(s.adam_d.step, 1u);

  const auto d1 = snapshot(s.d_params());
  const auto md1 = moments(s.adam_d);
  trainer.generator_step(s, seg, draws, r);
  EXPECT_EQ(snapshot(s.d_params()), d1);
  EXPECT_NE(snapshot(s.gc_params()), gc0);
  EXPECT_EQ(moments(s.adam_d), md1);
  EXPECT_EQ(s.adam_d.step, 1u);
  EXPECT_EQ(s.adam_gc.step, 1u);
  EXPECT_TRUE(r.finite());
}

TEST(Iteration, ConditionerLearnsOnlyThroughTheGenerator) {
  auto cfg = small_config();
  cfg.pretrain_iters = 0;
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(cfg, corpus);
  auto s = trainer.initial_state();
  const auto seg = prepare_segment<double>(trainer.next_segment(s), trainer.filterbank());
  const auto draws = draw_iteration<double>(seg.length(), 4, nn::receptive_field(s.d_cfg), s.rng);
  loss::LossReport r;

  auto c_grad_norm = [&] {
    const auto grads = trainer.generator_gradients(s, seg, draws, r);
    const auto params = s.gc_params();
    double norm = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name.rfind("C/", 0) == 0 && grads[i])
        for (double g : grads[i]->data()) norm += g * g;
    return norm;
  };
  EXPECT_GT(c_grad_norm(), 0.0);
  for (const auto& e : s.model.g.entries())
    if (e.name.find(".vf") != std::string::npos || e.name.find(".vg") != std::string::npos) {
      auto t = e.tensor;
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
  EXPECT_EQ(c_grad_norm(), 0.0);
}

TEST(Iteration, NoLearningSignalWithoutRegressionAndWithFlatCritic) {
  auto cfg = small_config();
  cfg.weights.lambda1 = 0;
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(cfg, corpus);
  auto s = trainer.initial_state();
  for (const auto& e : s.d.entries()) {
    auto t = e.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  const auto seg = prepare_segment<double>(trainer.next_segment(s), trainer.filterbank());
  const auto draws = draw_iteration<double>(seg.length(), 4, nn::receptive_field(s.d_cfg), s.rng);
  const auto gc0 = snapshot(s.gc_params());
  loss::LossReport r;
  trainer.generator_step(s, seg, draws, r);
  EXPECT_EQ(snapshot(s.gc_params()), gc0);
}

TEST(Iteration, IdenticalSeedsGiveIdenticalRuns) {
  const auto corpus = small_corpus<double>();
  auto run = [&] {
    Trainer<double> trainer(small_config(), corpus);
    auto s = trainer.initial_state();
    std::vector<double> losses;
    for (int i = 0; i < 3; ++i) losses.push_back(trainer.step(s).total_d);
    auto v = snapshot(s.gc_params());
    const auto d = snapshot(s.d_params());
    v.insert(v.end(), d.begin(), d.end());
    v.insert(v.end(), losses.begin(), losses.end());
    return v;
  };
  EXPECT_EQ(run(), run());
}

TEST(Iteration, PhaseFollowsTheIterationCounter) {
  auto cfg = small_config();
  cfg.pretrain_iters = 1;
  cfg.total_iters = 2;
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(cfg, corpus);
  auto s = trainer.initial_state();
  std::vector<std::string> phases;
  loss::LossLog* none = nullptr;
  run_training<double>(trainer, s, {}, none,
                       [&](std::size_t it, const loss::LossReport&) { phases.push_back(to_string(cfg.phase(it))); });
  EXPECT_EQ(phases, (std::vector<std::string>{"excitation", "speech"}));
  EXPECT_EQ(s.iteration, 2u);
}

// --- checkpoints -----------------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto corpus = small_corpus<double>();
  Trainer<double> trainer(small_config(), corpus);
  auto s = trainer.initial_state();
  trainer.step(s);
  const auto a = temp_path("a.gelpw"), b = temp_path("b.gelpw");
  save_checkpoint(a, trainer.config(), s);
  const auto loaded = load_checkpoint<double>(a);
  save_checkpoint(b, loaded.config, loaded.state);
  EXPECT_EQ(file_bytes(a), file_bytes(b));
  fs::remove(a);
  fs::remove(b);
}

TEST(Checkpoint, ResumeContinuesBitIdentically) {
  const auto corpus = small_corpus<double>();
  auto cfg = small_config();
  cfg.total_iters = 3;
  Trainer<double> trainer(cfg, corpus);
  auto straight = trainer.initial_state();
  for (int i = 0; i < 3; ++i) trainer.step(straight);

  auto first = trainer.initial_state();
  for (int i = 0; i < 2; ++i) trainer.step(first);
  const auto mid = temp_path("mid.gelpw");
  save_checkpoint(mid, cfg, first);
  auto resumed = load_checkpoint<double>(mid);
  Trainer<double> again(resumed.config, corpus);
  again.step(resumed.state);

  const auto x = temp_path("straight.gelpw"), y = temp_path("resumed.gelpw");
  save_checkpoint(x, cfg, straight);
  save_checkpoint(y, resumed.config, resumed.state);
  EXPECT_EQ(file_bytes(x), file_bytes(y));
  for (const auto& p : {mid, x, y}) fs::remove(p);
}

TEST(Checkpoint, MissingFileAndPrecisionMismatch) {
  EXPECT_THROW(load_checkpoint<double>(temp_path("missing.gelpw")), Error);
  const auto corpus = small_corpus<float>();
  Trainer<float> trainer(small_config(), corpus);
  auto s = trainer.initial_state();
  const auto p = temp_path("f32.gelpw");
  save_checkpoint(p, trainer.config(), s);
  EXPECT_NO_THROW(load_checkpoint<float>(p));
  EXPECT_THROW(load_checkpoint<double>(p), Error);
  fs::remove(p);
}

// --- short run ---------------------------------------------------------------------

TEST(ShortRun, SpeechDomainRegressionLossDrops) {
  TrainConfig cfg;
  cfg.segment_seconds = 0.25;
  cfg.crops_per_iter = 8;
  cfg.pretrain_iters = 0;
  cfg.total_iters = 200;
  cfg.seed = 3;
  Trainer<float> trainer(cfg, synthetic_corpus<float>(8, 2.0, 5));
  auto s = trainer.initial_state();
  std::vector<double> stft;
  bool finite = true;
  loss::LossLog* none = nullptr;
  run_training<float>(trainer, s, {}, none, [&](std::size_t, const loss::LossReport& r) {
    stft.push_back(r.l_stft);
    finite = finite && r.finite();
  });
  ASSERT_EQ(stft.size(), 200u);
  const double first = std::accumulate(stft.begin(), stft.begin() + 20, 0.0) / 20;
  const double last = std::accumulate(stft.end() - 20, stft.end(), 0.0) / 20;
  EXPECT_TRUE(finite);
  EXPECT_LE(last, 0.5 * first) << first << " -> " << last;
}

}  // namespace
