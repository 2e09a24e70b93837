#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gelp/train/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic tone-plus-noise corpus of 16 kHz WAV files"};
  std::string out;
  std::size_t count = 8;
  double seconds = 1.0;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of files")->check(CLI::PositiveNumber);
  app.add_option("--seconds", seconds, "Length of each file")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Random seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  try {
    std::filesystem::create_directories(out);
    const auto corpus = gelp::train::synthetic_corpus<float>(count, seconds, seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      std::ostringstream name;
      name << "utt" << std::setw(4) << std::setfill('0') << i << ".wav";
      gelp::dsp::write_wav(std::filesystem::path(out) / name.str(), corpus[i]);
    }
    std::cout << "wrote " << corpus.size() << " files to " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
