// Umbrella header.
#pragma once

#include "unidrf/version.hpp"
#include "unidrf/types.hpp"
#include "unidrf/rng.hpp"
#include "unidrf/stats.hpp"
#include "unidrf/sieve.hpp"
#include "unidrf/balancing_weights.hpp"
#include "unidrf/local_mreg.hpp"
#include "unidrf/parallel.hpp"
#include "unidrf/uniform_bands.hpp"
#include "unidrf/tuning.hpp"
#include "unidrf/simulation.hpp"
