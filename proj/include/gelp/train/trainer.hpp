#pragma once

#include <chrono>
#include <limits>
#include <sstream>

#include "gelp/ad/spectral.hpp"
#include "gelp/loss/losses.hpp"
#include "gelp/lpc/stft_filter.hpp"
#include "gelp/train/adam.hpp"
#include "gelp/train/data.hpp"
#include "gelp/vocoder/synthesis.hpp"

namespace gelp::train {

template <class T>
using Tensor = ad::Tensor<T>;

/// Everything derived from one target segment before any network runs.
template <class T>
struct SegmentFeatures {
  std::vector<T> emphasized;  // x_p
  std::vector<T> excitation;  // inverse_filter(x_p)
  Tensor<T> mel;              // (1, K, n_mels)
  Tensor<T> response;         // synthesis response H, (1, K, 2 * bins)

  std::size_t length() const { return emphasized.size(); }
  std::span<const T> target(Phase phase) const { return phase == Phase::excitation ? excitation : emphasized; }
};

template <class T>
SegmentFeatures<T> prepare_segment(std::span<const T> x, const dsp::MelFilterbank<T>& fb) {
  require(x.size() % vocoder::kHop == 0, "segment length must be a whole number of hops");
  SegmentFeatures<T> s;
  const auto mel = vocoder::extract_mel<T>(dsp::Waveform<T>{{x.begin(), x.end()}, dsp::kDefaultSampleRate}, fb);
  const auto cfg = dsp::filter_stft_config();
  const auto track = lpc::envelope_track_from_mel(mel, fb, cfg);
  s.emphasized = dsp::preemphasis<T>(x, static_cast<T>(dsp::kPreemphasis));
  s.excitation = lpc::inverse_filter<T>(s.emphasized, track, cfg);
  const auto k = mel.num_frames(), bands = mel.n_mels();
  std::vector<T> m(k * bands);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < bands; ++j) m[i * bands + j] = mel.frames(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  s.mel = Tensor<T>({1, k, bands}, std::move(m));
  s.response = ad::response_tensor(track.synthesis);
  return s;
}

template <class T>
Tensor<T> waveform_tensor(std::span<const T> x) {
  return Tensor<T>({1, x.size(), 1}, std::vector<T>(x.begin(), x.end()));
}

/// Network weights and optimizer state; everything a resumed run needs.
template <class T>
struct TrainState {
  std::size_t iteration = 0;
  vocoder::VocoderModel<T> model;  // G and C
  nn::NetConfig d_cfg;
  nn::Weights<T> d;
  AdamState<T> adam_gc;
  AdamState<T> adam_d;
  std::mt19937_64 rng;

  std::vector<Param<T>> gc_params() const {
    std::vector<Param<T>> p;
    for (const auto& e : model.g.entries())
      if (e.trainable) p.push_back({"G/" + e.name, e.tensor});
    for (const auto& e : model.c.entries())
      if (e.trainable) p.push_back({"C/" + e.name, e.tensor});
    return p;
  }
  std::vector<Param<T>> d_params() const {
    std::vector<Param<T>> p;
    for (const auto& e : d.entries())
      if (e.trainable) p.push_back({"D/" + e.name, e.tensor});
    return p;
  }
};

/// Per-channel mel mean and standard deviation over every frame of the corpus.
template <class T>
std::pair<std::vector<T>, std::vector<T>> mel_statistics(const std::vector<dsp::Waveform<T>>& corpus,
                                                         const dsp::MelFilterbank<T>& fb) {
  const std::size_t bands = fb.n_mels();
  std::vector<double> sum(bands, 0.0), sq(bands, 0.0);
  std::size_t frames = 0;
  for (const auto& w : corpus) {
    const auto mel = vocoder::extract_mel(w, fb);
    for (Eigen::Index k = 0; k < mel.frames.rows(); ++k)
      for (std::size_t j = 0; j < bands; ++j) {
        const double v = mel.frames(k, static_cast<Eigen::Index>(j));
        sum[j] += v;
        sq[j] += v * v;
      }
    frames += mel.num_frames();
  }
  std::vector<T> mean(bands), sd(bands);
  for (std::size_t j = 0; j < bands; ++j) {
    const double mu = sum[j] / static_cast<double>(frames);
    mean[j] = static_cast<T>(mu);
    sd[j] = static_cast<T>(std::sqrt(std::max(sq[j] / static_cast<double>(frames) - mu * mu, 1e-6)));
  }
  return {mean, sd};
}

/// Loss terms of one iteration as graphs. `gan` is the critic objective
/// -mean D(real) + mean D(fake).
template <class T>
struct LossTerms {
  Tensor<T> stft, gan, gp, r1;
};

/// Random draws of one iteration, so the same iteration can be replayed.
template <class T>
struct IterationDraws {
  Tensor<T> noise;                    // (1, L, 1)
  std::vector<std::size_t> crops;     // crop starts
  std::vector<T> interpolation;       // one weight per crop
};

template <class T>
IterationDraws<T> draw_iteration(std::size_t length, std::size_t crops, std::size_t rf, std::mt19937_64& rng) {
  IterationDraws<T> d;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> z(length);
  for (auto& v : z) v = static_cast<T>(normal(rng));
  d.noise = Tensor<T>({1, length, 1}, std::move(z));
  d.crops = crop_positions(crops, rf, length, rng);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  d.interpolation.resize(crops);
  for (auto& e : d.interpolation) e = static_cast<T>(uniform(rng));
  return d;
}

/// Output of C -> upsample -> G (-> envelope filter in the speech phase).
template <class T>
struct GeneratorPass {
  Tensor<T> context;  // (1, L, Rc), audio rate
  Tensor<T> output;   // e_hat or x_hat_p, (1, L, 1)
};

template <class T>
GeneratorPass<T> run_generator(const vocoder::VocoderModel<T>& m, const SegmentFeatures<T>& seg, const Tensor<T>& noise,
                               Phase phase) {
  GeneratorPass<T> p;
  const auto frames = nn::conditioner_forward(m.c_cfg, m.c, seg.mel);
  p.context = nn::upsample(frames, vocoder::kHop, seg.length());
  const auto e_hat = nn::generator_forward(m.g_cfg, m.g, noise, p.context);
  p.output = phase == Phase::excitation ? e_hat : ad::stft_filter(e_hat, seg.response, dsp::filter_stft_config());
  return p;
}

template <class T>
loss::Critic<T> make_critic(const nn::NetConfig& cfg, const nn::Weights<T>& w) {
  return [&cfg, &w](const Tensor<T>& x, const Tensor<T>& c) { return nn::discriminator_forward(cfg, w, x, c); };
}

/// Critic-side terms on aligned crops of the target, the generated signal
/// and the context.
template <class T>
LossTerms<T> critic_terms(const nn::NetConfig& d_cfg, const nn::Weights<T>& d, const Tensor<T>& target,
                          const Tensor<T>& fake, const Tensor<T>& context, const IterationDraws<T>& draws) {
  const std::size_t rf = nn::receptive_field(d_cfg), length = target.dim(1);
  const auto gather = crop_map<T>(draws.crops, rf, length);
  const auto real_c = ad::linear_map(target, gather);
  const auto fake_c = ad::linear_map(fake, gather);
  const auto ctx_c = ad::linear_map(context, gather);
  const auto critic = make_critic(d_cfg, d);
  LossTerms<T> t;
  t.gan = loss::gan_loss(critic(real_c, ctx_c), critic(fake_c, ctx_c)).d_term;
  t.gp = loss::gradient_penalty(real_c, fake_c, ctx_c, critic, std::span<const T>(draws.interpolation));
  t.r1 = loss::r1_penalty(real_c, ctx_c, critic);
  return t;
}

/// All four losses with every path to G, C and D kept on the graph; used for
/// gradient verification.
template <class T>
LossTerms<T> full_losses(const vocoder::VocoderModel<T>& m, const nn::NetConfig& d_cfg, const nn::Weights<T>& d,
                         const SegmentFeatures<T>& seg, const IterationDraws<T>& draws, Phase phase) {
  const auto pass = run_generator(m, seg, draws.noise, phase);
  const auto target = waveform_tensor<T>(seg.target(phase));
  auto t = critic_terms(d_cfg, d, target, pass.output, pass.context, draws);
  t.stft = loss::stft_loss(target, pass.output, dsp::feature_stft_config());
  return t;
}

template <class T>
std::vector<Tensor<T>> tensors(const std::vector<Param<T>>& params) {
  std::vector<Tensor<T>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<dsp::Waveform<T>> corpus)
      : cfg_(std::move(cfg)), corpus_(std::move(corpus)), fb_(dsp::default_mel_filterbank<T>()) {
    cfg_.validate();
    if (corpus_.empty()) throw InvalidArgument("the training corpus is empty");
    for (const auto& w : corpus_) {
      require(w.sample_rate == dsp::kDefaultSampleRate, "corpus audio must be 16 kHz");
      require(w.samples.size() >= 2, "corpus utterances need at least two samples");
      lengths_.push_back(w.samples.size());
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const dsp::MelFilterbank<T>& filterbank() const { return fb_; }
  const std::vector<dsp::Waveform<T>>& corpus() const { return corpus_; }

  /// Fresh weights from the config seed; C's input statistics come from the corpus.
  TrainState<T> initial_state() const {
    const auto cfgs = vocoder::model_configs(cfg_.model);
    TrainState<T> s;
    s.model = vocoder::init_vocoder<T>(cfgs, cfg_.seed);
    if (s.model.c_cfg.normalize_input) {
      const auto [mean, sd] = mel_statistics(corpus_, fb_);
      std::copy(mean.begin(), mean.end(), s.model.c["norm.mean"].mutable_data().begin());
      std::copy(sd.begin(), sd.end(), s.model.c["norm.std"].mutable_data().begin());
    }
    s.d_cfg = cfgs.d;
    s.d = nn::init_weights<T>(cfgs.d, cfg_.seed + 2);
    s.adam_gc = AdamState<T>::zeros(s.gc_params());
    s.adam_d = AdamState<T>::zeros(s.d_params());
    s.rng.seed(cfg_.seed + 3);
    return s;
  }

  /// Draws the next segment from the state's generator.
  std::vector<T> next_segment(TrainState<T>& s) const {
    const std::size_t len = cfg_.segment_samples();
    const auto src = draw_segment(lengths_, len, s.rng);
    return cut_segment(corpus_[src.utterance], src, len);
  }

  /// One iteration: a critic update, then a joint G/C update against the
  /// updated critic. A step whose loss or gradients are non-finite is
  /// skipped with a warning; the iteration still counts.
  loss::LossReport step(TrainState<T>& s) const {
    const auto segment = next_segment(s);
    const auto seg = prepare_segment<T>(segment, fb_);
    const auto draws = draw_iteration<T>(seg.length(), cfg_.crops_per_iter, nn::receptive_field(s.d_cfg), s.rng);
    return step_on(s, seg, draws);
  }

  loss::LossReport step_on(TrainState<T>& s, const SegmentFeatures<T>& seg, const IterationDraws<T>& draws) const {
    loss::LossReport r;
    critic_step(s, seg, draws, r);
    generator_step(s, seg, draws, r);
    ++s.iteration;
    return r;
  }

  /// Updates D only; generator outputs are constants here.
  void critic_step(TrainState<T>& s, const SegmentFeatures<T>& seg, const IterationDraws<T>& draws,
                   loss::LossReport& r) const {
    const Phase phase = cfg_.phase(s.iteration);
    const auto target = waveform_tensor<T>(seg.target(phase));
    GeneratorPass<T> fixed;
    {
      ad::NoGrad guard;
      fixed = run_generator(s.model, seg, draws.noise, phase);
    }
    try {
      const auto t = critic_terms(s.d_cfg, s.d, target, fixed.output, fixed.context, draws);
      const auto total = loss::discriminator_total(t.gan, t.gp, t.r1, cfg_.weights);
      r.l_gan_d = t.gan.item();
      r.l_gp = t.gp.item();
      r.l_r1 = t.r1.item();
      r.total_d = total.item();
      const auto params = s.d_params();
      const auto grads = ad::grad(total, tensors(params));
      if (all_finite(grads))
        adam_step(params, grads, s.adam_d, cfg_.adam);
      else
        log::warn("iteration " + std::to_string(s.iteration) + ": non-finite critic gradient, update skipped");
    } catch (const NonFiniteError& e) {
      r.l_gan_d = r.l_gp = r.l_r1 = r.total_d = std::numeric_limits<double>::quiet_NaN();
      log::warn("iteration " + std::to_string(s.iteration) + ": " + e.what() + "; critic update skipped");
    }
  }

  /// Gradients of the G/C objective for the current state, one slot per
  /// gc_params() entry. The critic sees a detached context, so C learns
  /// only through G.
  std::vector<std::optional<Tensor<T>>> generator_gradients(const TrainState<T>& s, const SegmentFeatures<T>& seg,
                                                            const IterationDraws<T>& draws,
                                                            loss::LossReport& r) const {
    const Phase phase = cfg_.phase(s.iteration);
    const auto target = waveform_tensor<T>(seg.target(phase));
    const auto pass = run_generator(s.model, seg, draws.noise, phase);
    const auto l_stft = loss::stft_loss(target, pass.output, dsp::feature_stft_config());
    const auto gather = crop_map<T>(draws.crops, nn::receptive_field(s.d_cfg), seg.length());
    const auto ctx = ad::linear_map(pass.context.detach(), gather);
    const auto critic = make_critic(s.d_cfg, s.d);
    Tensor<T> real_scores;
    {
      ad::NoGrad guard;
      real_scores = critic(ad::linear_map(target, gather), ctx);
    }
    const auto gan = loss::gan_loss(real_scores, critic(ad::linear_map(pass.output, gather), ctx));
    const auto total = loss::generator_total(l_stft, gan.d_term, cfg_.weights);
    r.l_stft = l_stft.item();
    r.l_gan_g = gan.g_term.item();
    r.total_g = total.item();
    return ad::grad(total, tensors(s.gc_params()));
  }

  /// Updates G and C jointly against the current critic.
  void generator_step(TrainState<T>& s, const SegmentFeatures<T>& seg, const IterationDraws<T>& draws,
                      loss::LossReport& r) const {
    try {
      const auto grads = generator_gradients(s, seg, draws, r);
      if (all_finite(grads))
        adam_step(s.gc_params(), grads, s.adam_gc, cfg_.adam);
      else
        log::warn("iteration " + std::to_string(s.iteration) + ": non-finite generator gradient, update skipped");
    } catch (const NonFiniteError& e) {
      r.l_stft = r.l_gan_g = r.total_g = std::numeric_limits<double>::quiet_NaN();
      log::warn("iteration " + std::to_string(s.iteration) + ": " + e.what() + "; generator update skipped");
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<dsp::Waveform<T>> corpus_;
  std::vector<std::size_t> lengths_;
  dsp::MelFilterbank<T> fb_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a GELPW archive (version 2 for 64-bit runs, 1 for 32-bit) with
// G/, C/ and D/ tensors, Adam moments under adam.m/ and adam.v/, the configs
// in CONF and the counters plus generator state in OPTS.

template <class T>
void append_moments(nn::WeightArchive& a, const AdamState<T>& s, const std::vector<Param<T>>& params) {
  s.check(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto shape = params[i].tensor.shape();
    a.tensors.push_back({"adam.m/" + s.names[i], shape, {s.m[i].begin(), s.m[i].end()}});
    a.tensors.push_back({"adam.v/" + s.names[i], shape, {s.v[i].begin(), s.v[i].end()}});
  }
}

template <class T>
AdamState<T> extract_moments(const nn::WeightArchive& a, const std::vector<Param<T>>& params, std::uint64_t step) {
  auto s = AdamState<T>::zeros(params);
  s.step = step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"adam.m/", &s.m[i]}, std::pair{"adam.v/", &s.v[i]}}) {
      const auto* t = a.find(prefix + params[i].name);
      if (!t) throw FormatError("checkpoint is missing optimizer tensor " + std::string(prefix) + params[i].name);
      if (t->values.size() != dst->size())
        throw FormatError("optimizer tensor " + std::string(prefix) + params[i].name + " has the wrong size");
      std::transform(t->values.begin(), t->values.end(), dst->begin(), [](double v) { return static_cast<T>(v); });
    }
  }
  return s;
}

template <class T>
constexpr std::uint32_t archive_version() {
  return std::is_same_v<T, double> ? nn::kWeightsF64 : nn::kWeightsF32;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState<T>& s) {
  nn::WeightArchive a;
  a.version = archive_version<T>();
  vocoder::append_model(a, s.model);
  nn::append_weights(a, s.d, "D/");
  a.chunks["CONF"] += nn::to_text(s.d_cfg, "D.") + to_text(cfg);
  append_moments(a, s.adam_gc, s.gc_params());
  append_moments(a, s.adam_d, s.d_params());
  std::ostringstream opts;
  opts << "iteration=" << s.iteration << "\nadam_gc_step=" << s.adam_gc.step << "\nadam_d_step=" << s.adam_d.step
       << "\n";
  a.chunks["OPTS"] = opts.str();
  std::ostringstream rng;
  rng << s.rng;
  a.chunks["RNGS"] = rng.str();
  nn::write_archive(path, a);
}

template <class T>
struct Checkpoint {
  TrainConfig config;
  TrainState<T> state;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("checkpoint " + path.string() + " does not exist");
  const auto a = nn::read_archive(path);
  if (a.version != archive_version<T>())
    throw FormatError(path.string() + ": checkpoint is GELPW version " + std::to_string(a.version) + " (" +
                      (a.version == nn::kWeightsF64 ? "64" : "32") + "-bit) but this run uses " +
                      (std::is_same_v<T, double> ? "64" : "32") + "-bit precision");
  for (const char* tag : {"CONF", "OPTS", "RNGS"})
    if (!a.chunks.count(tag)) throw FormatError(path.string() + ": not a training checkpoint (no " + tag + " chunk)");
  Checkpoint<T> c;
  const auto& conf = a.chunks.at("CONF");
  // Only the training keys are read here; the network keys carry a prefix.
  std::string train_text;
  std::istringstream lines(conf);
  for (std::string line; std::getline(lines, line);)
    if (line.rfind("G.", 0) != 0 && line.rfind("C.", 0) != 0 && line.rfind("D.", 0) != 0) train_text += line + "\n";
  c.config = train_config_from_text(train_text);
  auto& s = c.state;
  s.model = vocoder::model_from_archive<T>(a, path.string());
  s.d_cfg = nn::net_config_from_text(conf, "D.");
  s.d = nn::extract_weights<T>(a, s.d_cfg, "D/");
  const auto opts = nn::parse_key_values(a.chunks.at("OPTS"));
  auto get = [&](const char* key) {
    auto it = opts.find(key);
    if (it == opts.end()) throw FormatError(path.string() + ": OPTS chunk lacks " + key);
    return nn::parse_count(key, it->second);
  };
  s.iteration = get("iteration");
  s.adam_gc = extract_moments(a, s.gc_params(), get("adam_gc_step"));
  s.adam_d = extract_moments(a, s.d_params(), get("adam_d_step"));
  std::istringstream rng(a.chunks.at("RNGS"));
  rng >> s.rng;
  if (!rng) throw FormatError(path.string() + ": corrupt generator state");
  return c;
}

/// Runs iterations until total_iters (or stop_at, if earlier), appending one
/// log row per iteration and writing checkpoints every checkpoint_every
/// iterations and at the end.
template <class T>
void run_training(const Trainer<T>& trainer, TrainState<T>& s, const std::filesystem::path& checkpoint,
                  loss::LossLog* csv = nullptr,
                  const std::function<void(std::size_t, const loss::LossReport&)>& on_iteration = {},
                  std::size_t stop_at = std::numeric_limits<std::size_t>::max()) {
  const auto& cfg = trainer.config();
  while (s.iteration < std::min(cfg.total_iters, stop_at)) {
    const std::size_t it = s.iteration;
    const auto report = trainer.step(s);
    if (csv) csv->append(it, to_string(cfg.phase(it)), report);
    if (on_iteration) on_iteration(it, report);
    if (!checkpoint.empty() && cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0)
      save_checkpoint(checkpoint, cfg, s);
  }
  if (!checkpoint.empty()) save_checkpoint(checkpoint, cfg, s);
}

}  // namespace gelp::train
