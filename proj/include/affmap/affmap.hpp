#pragma once

// Umbrella header: the full library in dependency order.

#include "affmap/core/error.hpp"
#include "affmap/core/rng.hpp"
#include "affmap/core/tensor.hpp"

#include "affmap/linops/downsample.hpp"
#include "affmap/linops/pseudoinverse.hpp"
#include "affmap/linops/projector.hpp"

#include "affmap/nn/net.hpp"
#include "affmap/nn/optim.hpp"

#include "affmap/densities/swiss_roll.hpp"
#include "affmap/densities/kde.hpp"
#include "affmap/densities/oracles.hpp"

#include "affmap/objectives/pixel.hpp"
#include "affmap/objectives/gan.hpp"
#include "affmap/objectives/denoiser.hpp"
#include "affmap/objectives/stochastic.hpp"

#include "affmap/metrics/metrics.hpp"

#include "affmap/io/container.hpp"
#include "affmap/io/csv.hpp"
#include "affmap/io/image.hpp"

#include "affmap/cli/config.hpp"
#include "affmap/cli/experiments.hpp"
