#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "gelp/dsp/feature_file.hpp"
#include "gelp/dsp/griffin_lim.hpp"
#include "gelp/train/gradcheck.hpp"
#include "gelp/vocoder/bench.hpp"

namespace {

using namespace gelp;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

Precision precision_from_env() {
  const char* v = std::getenv("GELP_PRECISION");
  if (!v || std::string(v).empty() || std::string(v) == "f32") return Precision::f32;
  if (std::string(v) == "f64") return Precision::f64;
  throw UsageError("GELP_PRECISION must be f32 or f64, got \"" + std::string(v) + "\"");
}

template <class F>
int dispatch(Precision p, F&& f) {
  return p == Precision::f64 ? f(double{}) : f(float{});
}

std::string read_text(const fs::path& path) {
  auto in = io::open_input(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Mel input from a GELPF feature file or a 16 kHz WAV.
template <class T>
dsp::MelSpectrogram<T> load_mel(const fs::path& in, const dsp::MelFilterbank<T>& fb) {
  if (in.extension() == ".gelpf") {
    dsp::MelSpectrogram<T> m;
    m.frames = dsp::read_features<T>(in);
    if (m.n_mels() != fb.n_mels())
      throw FormatError(in.string() + ": " + std::to_string(m.n_mels()) + " mel bands, expected " +
                        std::to_string(fb.n_mels()));
    return m;
  }
  return vocoder::extract_mel(dsp::read_wav<T>(in), fb);
}

// The analysis settings are fixed by the trained networks; a config file
// may restate them and any disagreement is an error.
void check_feature_config(const fs::path& path) {
  const auto stft = dsp::feature_stft_config();
  const std::map<std::string, double> fixed{{"sample_rate", dsp::kDefaultSampleRate},
                                            {"n_mels", static_cast<double>(dsp::kDefaultMels)},
                                            {"window_length", static_cast<double>(stft.window_length)},
                                            {"hop_length", static_cast<double>(stft.hop_length)},
                                            {"fft_length", static_cast<double>(stft.fft_length)},
                                            {"preemphasis", dsp::kPreemphasis}};
  for (const auto& [key, value] : nn::parse_key_values(read_text(path))) {
    const auto it = fixed.find(key);
    if (it == fixed.end()) throw FormatError(path.string() + ": unknown feature option \"" + key + "\"");
    if (train::parse_real(key, value) != it->second)
      throw Error(path.string() + ": " + key + "=" + value + " is not supported; the features use " + key + "=" +
                  train::format_real(it->second));
  }
}

struct ExtractArgs {
  std::string in, out, config;
};

template <class T>
int extract(const ExtractArgs& a) {
  if (!a.config.empty()) check_feature_config(a.config);
  const auto fb = dsp::default_mel_filterbank<T>();
  const auto mel = vocoder::extract_mel(dsp::read_wav<T>(a.in), fb);
  dsp::write_features(a.out, mel.frames);
  std::cout << "frames " << mel.num_frames() << "\nn_mels " << mel.n_mels() << "\n";
  return 0;
}

struct SynthArgs {
  std::string in, weights, out;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

template <class T>
int copysynth(const SynthArgs& a) {
  const vocoder::Synthesizer<T> syn(vocoder::load_vocoder<T>(a.weights));
  const auto mel = load_mel(a.in, syn.filterbank());
  std::size_t chunk = vocoder::kChunkSamples;
  if (a.threads > 1) chunk = std::max(vocoder::kHop, vocoder::synthesis_length(mel.num_frames()) / a.threads + 1);
  const auto out = syn.synthesize(mel, a.seed, chunk, a.threads);
  dsp::write_wav(a.out, out);
  std::cout << "frames " << mel.num_frames() << "\nsamples " << out.samples.size() << "\n";
  return 0;
}

struct GriffinArgs {
  std::string in, out;
  std::size_t iters = 32;
  std::uint64_t seed = 1;
};

template <class T>
int griffinlim(const GriffinArgs& a) {
  const auto fb = dsp::default_mel_filterbank<T>();
  const auto mel = load_mel(a.in, fb);
  const auto gl = dsp::griffin_lim(dsp::mel_to_linear(mel, fb), dsp::feature_stft_config(), a.iters, a.seed);
  dsp::write_wav(a.out, dsp::deemphasis(dsp::Waveform<T>{gl.signal, dsp::kDefaultSampleRate},
                                        static_cast<T>(dsp::kPreemphasis)));
  std::cout << "iteration spectral_convergence\n" << std::setprecision(9);
  for (std::size_t i = 0; i < gl.convergence.size(); ++i) std::cout << i << ' ' << gl.convergence[i] << '\n';
  const double db = 20 * std::log10(gl.convergence.front() / gl.convergence.back());
  std::cout << "reduction_db " << db << "\n";
  return 0;
}

struct TrainArgs {
  std::string corpus, config, out, log, resume;
  std::vector<std::string> overrides;
  std::size_t stop_after = 0;
  std::size_t report_every = 100;
};

/// Keeps the header and the rows logged before `iteration`.
void trim_log(const fs::path& path, std::size_t iteration) {
  if (!fs::exists(path)) return;
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    if (std::getline(in, line)) keep.push_back(line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos && nn::parse_count("log row", line.substr(0, comma)) < iteration)
        keep.push_back(line);
    }
  }
  io::atomic_write(path, [&](std::ostream& out) {
    for (const auto& l : keep) out << l << '\n';
  });
}

template <class T>
int run_train(const TrainArgs& a) {
  auto corpus = train::load_corpus<T>(a.corpus);
  train::TrainConfig cfg;
  std::optional<train::TrainState<T>> resumed;
  if (!a.resume.empty()) {
    auto ck = train::load_checkpoint<T>(a.resume);
    cfg = ck.config;
    resumed = std::move(ck.state);
  } else if (!a.config.empty()) {
    cfg = train::train_config_from_text(read_text(a.config));
  }
  for (const auto& o : a.overrides) train::apply_override(cfg, o);
  cfg.validate();

  const train::Trainer<T> trainer(cfg, std::move(corpus));
  auto state = resumed ? std::move(*resumed) : trainer.initial_state();
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".csv") : fs::path(a.log);
  if (resumed) trim_log(log_path, state.iteration);
  loss::LossLog log(log_path, resumed.has_value());

  const std::size_t first = state.iteration;
  const std::size_t stop = a.stop_after ? first + a.stop_after : std::numeric_limits<std::size_t>::max();
  const auto start = std::chrono::steady_clock::now();
  double last_stft = 0;
  train::run_training(
      trainer, state, a.out, &log,
      [&](std::size_t it, const loss::LossReport& r) {
        last_stft = r.l_stft;
        if (!r.finite()) log::warn("iteration " + std::to_string(it) + ": non-finite loss");
        if (a.report_every && (it + 1) % a.report_every == 0)
          log::info("iteration " + std::to_string(it + 1) + "/" + std::to_string(cfg.total_iters) + " (" +
                    train::to_string(cfg.phase(it)) + ") l_stft " + train::format_real(r.l_stft));
      },
      stop);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "iterations " << state.iteration << "/" << cfg.total_iters << "\nthis_run " << state.iteration - first
            << "\nlast_l_stft " << std::setprecision(9) << last_stft << "\nseconds " << std::setprecision(4) << elapsed
            << "\ncheckpoint " << a.out << "\nlog " << log_path.string() << "\n";
  return 0;
}

struct GradArgs {
  bool toy = true;
  std::uint64_t seed = 1;
  std::size_t max_per_tensor = 0;
  bool corrupt = false;
};

int gradcheck(const GradArgs& a, Precision p) {
  if (p == Precision::f32) log::info("gradient checks always run in 64-bit");
  train::GradCheckOptions opt;
  opt.seed = a.seed;
  opt.max_per_tensor = a.max_per_tensor;
  ad::testing::corrupt_backward() = a.corrupt;
  train::TrainConfig cfg;
  cfg.model = vocoder::ModelSize::toy;
  const auto r = train::gradient_check(cfg, opt);
  std::cout << "parameters " << r.parameters << "\n" << std::setprecision(3);
  for (const auto& c : r.checks)
    std::cout << train::to_string(c.phase) << ' ' << c.loss << " max_rel_error " << c.max_rel_error << " ("
              << c.coordinates << " coordinates, worst " << c.worst_parameter << "[" << c.worst_index << "])"
              << (c.passed(opt.tolerance) ? "" : " FAIL") << '\n';
  std::cout << "seconds " << r.seconds << '\n';
  if (r.passed(opt.tolerance)) {
    std::cout << "PASS\n";
    return 0;
  }
  std::cerr << "gradient check failed (tolerance " << opt.tolerance << "); offending parameters:\n";
  for (const auto& c : r.checks)
    for (const auto& name : c.failing)
      std::cerr << "  " << train::to_string(c.phase) << ' ' << c.loss << ' ' << name << '\n';
  return 2;
}

struct BenchArgs {
  std::string weights, out;
  vocoder::BenchOptions opt;
};

template <class T>
int bench(const BenchArgs& a) {
  const auto model = a.weights.empty()
                         ? vocoder::init_vocoder<T>(vocoder::model_configs(vocoder::ModelSize::full), a.opt.seed)
                         : vocoder::load_vocoder<T>(a.weights);
  const auto r = vocoder::benchmark(model, a.opt);
  if (!a.out.empty()) dsp::write_wav(a.out, r.audio);
  std::cout << "precision " << (sizeof(T) == 8 ? "f64" : "f32") << "\nthreads " << a.opt.threads << "\nsamples "
            << r.samples << "\nseconds " << r.seconds << "\nsamples_per_second " << r.samples_per_second
            << "\nreal_time_factor " << r.real_time_factor << "\n";
  if (r.reference_samples)
    std::cout << "sequential_samples " << r.reference_samples << "\nsequential_samples_per_second "
              << r.reference_samples_per_second << "\nparallel_over_sequential " << r.speedup() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-excited linear prediction vocoder", "gelp"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  ExtractArgs ex;
  auto* c_extract = app.add_subcommand("extract", "Compute log-mel features of a WAV file");
  c_extract->add_option("--in", ex.in, "16 kHz mono WAV")->required();
  c_extract->add_option("--out", ex.out, "Output GELPF file")->required();
  c_extract->add_option("--config", ex.config, "key=value file restating the feature settings");

  SynthArgs sy;
  auto* c_copy = app.add_subcommand("copysynth", "Resynthesize speech from its features");
  c_copy->add_option("--in", sy.in, "WAV or GELPF input")->required();
  c_copy->add_option("--weights", sy.weights, "GELPW model or training checkpoint")->required();
  c_copy->add_option("--out", sy.out, "Output WAV")->required();
  c_copy->add_option("--seed", sy.seed, "Noise seed");
  c_copy->add_option("--threads", sy.threads, "Worker threads")->check(CLI::PositiveNumber);

  GriffinArgs gl;
  auto* c_gl = app.add_subcommand("griffinlim", "Griffin-Lim baseline from mel features");
  c_gl->add_option("--in", gl.in, "WAV or GELPF input")->required();
  c_gl->add_option("--out", gl.out, "Output WAV")->required();
  c_gl->add_option("--iters", gl.iters, "Iterations")->check(CLI::PositiveNumber);
  c_gl->add_option("--seed", gl.seed, "Initial phase seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train G, C and D on a directory of WAV files");
  c_train->add_option("--corpus", tr.corpus, "Directory of 16 kHz WAV files")->required();
  c_train->add_option("--config", tr.config, "key=value training config");
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--log", tr.log, "CSV loss log (default: <out>.csv)");
  c_train->add_option("--set", tr.overrides, "Override a config key, key=value")->take_all();
  c_train->add_option("--resume", tr.resume, "Continue from this checkpoint");
  c_train->add_option("--stop-after", tr.stop_after, "Stop after this many iterations (0: run to the end)");
  c_train->add_option("--report-every", tr.report_every, "Progress line interval on stderr (0: off)");
  c_train->get_option("--resume")->excludes("--config");

  GradArgs gr;
  auto* c_grad = app.add_subcommand("gradcheck", "Compare loss gradients with finite differences");
  c_grad->add_flag("--toy-config", gr.toy, "Use the toy network sizes (the only supported setting)");
  c_grad->add_option("--seed", gr.seed, "Initialization and data seed");
  c_grad->add_option("--max-per-tensor", gr.max_per_tensor, "Check at most this many coordinates per tensor (0: all)");
  c_grad->add_flag("--corrupt-backward", gr.corrupt)->group("");

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench", "Measure synthesis throughput");
  c_bench->add_option("--weights", be.weights, "GELPW model (default: random weights, full sizes)");
  c_bench->add_option("--seconds", be.opt.seconds, "Seconds of audio to synthesize")->check(CLI::PositiveNumber);
  c_bench->add_option("--threads", be.opt.threads, "Worker threads")->check(CLI::PositiveNumber);
  c_bench->add_option("--seed", be.opt.seed, "Input and noise seed");
  c_bench->add_option("--reference-samples", be.opt.reference_samples,
                      "Samples timed on the per-sample reference path (0: skip)");
  c_bench->add_option("--out", be.out, "Write the synthesized audio here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help("gelp") : app.help());
    return 1;
  }

  try {
    const Precision p = precision_from_env();
    if (c_extract->parsed()) return dispatch(p, [&](auto t) { return extract<decltype(t)>(ex); });
    if (c_copy->parsed()) return dispatch(p, [&](auto t) { return copysynth<decltype(t)>(sy); });
    if (c_gl->parsed()) return dispatch(p, [&](auto t) { return griffinlim<decltype(t)>(gl); });
    if (c_train->parsed()) return dispatch(p, [&](auto t) { return run_train<decltype(t)>(tr); });
    if (c_grad->parsed()) return gradcheck(gr, p);
    if (c_bench->parsed()) return dispatch(p, [&](auto t) { return bench<decltype(t)>(be); });
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
