#pragma once

#include "sparsefeed/commands.hpp"
#include "sparsefeed/compression.hpp"
#include "sparsefeed/config.hpp"
#include "sparsefeed/datasets.hpp"
#include "sparsefeed/diagnostics.hpp"
#include "sparsefeed/linalg.hpp"
#include "sparsefeed/metrics.hpp"
#include "sparsefeed/objectives.hpp"
#include "sparsefeed/optimizers.hpp"
#include "sparsefeed/random.hpp"
#include "sparsefeed/simulator.hpp"
#include "sparsefeed/trace.hpp"
