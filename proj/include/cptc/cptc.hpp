#pragma once

/// Umbrella header: the whole sparse low-rank tensor completion engine.

#include "cptc/tensor_core.hpp"
#include "cptc/kernels.hpp"
#include "cptc/cp_model.hpp"
#include "cptc/metric.hpp"
#include "cptc/optim.hpp"
#include "cptc/synth.hpp"
#include "cptc/io.hpp"
#include "cptc/parallel.hpp"
