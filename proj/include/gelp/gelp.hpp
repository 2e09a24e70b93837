#pragma once

#include "gelp/dsp/feature_file.hpp"
#include "gelp/dsp/griffin_lim.hpp"
#include "gelp/dsp/wav.hpp"
#include "gelp/lpc/stft_filter.hpp"
#include "gelp/train/gradcheck.hpp"
#include "gelp/train/trainer.hpp"
#include "gelp/vocoder/bench.hpp"
#include "gelp/vocoder/synthesis.hpp"
