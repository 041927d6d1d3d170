#pragma once

#include "mfm/checkpoint.hpp"
#include "mfm/customize.hpp"
#include "mfm/denoiser.hpp"
#include "mfm/diffmath.hpp"
#include "mfm/features.hpp"
#include "mfm/lora.hpp"
#include "mfm/metrics.hpp"
#include "mfm/pgm.hpp"
#include "mfm/studies.hpp"
#include "mfm/synthdata.hpp"
#include "mfm/trajectory.hpp"
