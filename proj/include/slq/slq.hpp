#pragma once

// Umbrella header for the policy-iteration library.

#include "slq/errors.hpp"
#include "slq/experiment.hpp"
#include "slq/linalg.hpp"
#include "slq/lyapunov.hpp"
#include "slq/model.hpp"
#include "slq/rlpi.hpp"
#include "slq/rng.hpp"
#include "slq/sde.hpp"
#include "slq/sysid.hpp"
