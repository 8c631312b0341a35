#pragma once

// Umbrella header.

#include "orderlab/analysis.hpp"
#include "orderlab/common.hpp"
#include "orderlab/config.hpp"
#include "orderlab/curriculum.hpp"
#include "orderlab/data.hpp"
#include "orderlab/estimator.hpp"
#include "orderlab/model.hpp"
#include "orderlab/param_vector.hpp"
#include "orderlab/parallel.hpp"
#include "orderlab/permutation.hpp"
#include "orderlab/projection.hpp"
#include "orderlab/rng.hpp"
#include "orderlab/store.hpp"
#include "orderlab/trainer.hpp"
