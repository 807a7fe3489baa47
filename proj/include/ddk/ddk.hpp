#pragma once

// Umbrella header: exact data-driven representations of systems with a
// linear lifted embedding, plus the predictive-control and CLI layers.

#include "ddk/benchmark.hpp"
#include "ddk/cli.hpp"
#include "ddk/control.hpp"
#include "ddk/core.hpp"
#include "ddk/io.hpp"
#include "ddk/lifting.hpp"
#include "ddk/linalg.hpp"
#include "ddk/qp.hpp"
#include "ddk/representation.hpp"
#include "ddk/systems.hpp"
#include "ddk/trajectory.hpp"
