#pragma once

#include "spice/calibration/calibration.hpp"
#include "spice/cli/run_config.hpp"
#include "spice/dsp/audio.hpp"
#include "spice/dsp/cqt.hpp"
#include "spice/dsp/mix.hpp"
#include "spice/dsp/resample.hpp"
#include "spice/dsp/wav.hpp"
#include "spice/eval/eval.hpp"
#include "spice/model/checkpoint.hpp"
#include "spice/model/config.hpp"
#include "spice/model/infer.hpp"
#include "spice/model/losses.hpp"
#include "spice/model/network.hpp"
#include "spice/model/trainer.hpp"
#include "spice/pipeline.hpp"
#include "spice/synth/synth.hpp"
