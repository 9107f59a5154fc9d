#pragma once

// Umbrella header.

#include "capsdbn/capsnet.hpp"
#include "capsdbn/dbn.hpp"
#include "capsdbn/error.hpp"
#include "capsdbn/eval.hpp"
#include "capsdbn/hybrid.hpp"
#include "capsdbn/numerics.hpp"
#include "capsdbn/preprocess.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/synth.hpp"
#include "capsdbn/tensor.hpp"
#include "capsdbn/training.hpp"
