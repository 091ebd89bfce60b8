// Umbrella header.
#pragma once

#include "pnpttt/config_file.hpp"
#include "pnpttt/conv.hpp"
#include "pnpttt/denoiser.hpp"
#include "pnpttt/deq.hpp"
#include "pnpttt/experiment.hpp"
#include "pnpttt/fft.hpp"
#include "pnpttt/fixed_point.hpp"
#include "pnpttt/forward_model.hpp"
#include "pnpttt/image.hpp"
#include "pnpttt/io.hpp"
#include "pnpttt/metrics.hpp"
#include "pnpttt/rng.hpp"
#include "pnpttt/synth.hpp"
#include "pnpttt/training.hpp"
#include "pnpttt/ttt.hpp"
#include "pnpttt/version.hpp"
