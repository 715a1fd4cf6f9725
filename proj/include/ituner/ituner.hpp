#pragma once

// Umbrella header for the whole library.

#include "ituner/archive.hpp"
#include "ituner/config.hpp"
#include "ituner/data.hpp"
#include "ituner/decode.hpp"
#include "ituner/decoder.hpp"
#include "ituner/gradcheck.hpp"
#include "ituner/heatmap.hpp"
#include "ituner/image.hpp"
#include "ituner/ituning.hpp"
#include "ituner/ledger.hpp"
#include "ituner/metrics.hpp"
#include "ituner/ops.hpp"
#include "ituner/pipeline.hpp"
#include "ituner/rng.hpp"
#include "ituner/tape.hpp"
#include "ituner/tensor.hpp"
#include "ituner/trainer.hpp"
#include "ituner/vision.hpp"
#include "ituner/verify.hpp"
