#pragma once

// Experiment harness: run configuration, training loop, logging, aggregation,
// plots, and the ordering suites built on top of the learners.

#include "flare/harness/config.hpp"
#include "flare/harness/log.hpp"
#include "flare/harness/loop.hpp"
#include "flare/harness/plot.hpp"
#include "flare/harness/suite.hpp"
