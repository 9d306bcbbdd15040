#pragma once

#include "boostlmm/correction.hpp"
#include "boostlmm/cv.hpp"
#include "boostlmm/dataset.hpp"
#include "boostlmm/engine.hpp"
#include "boostlmm/errors.hpp"
#include "boostlmm/io.hpp"
#include "boostlmm/ml_oracle.hpp"
#include "boostlmm/model.hpp"
#include "boostlmm/optimize.hpp"
#include "boostlmm/parallel.hpp"
#include "boostlmm/simulation.hpp"
