#pragma once

// Umbrella header.

#include "conformal/calibrate.hpp"
#include "conformal/cluster.hpp"
#include "conformal/conditional.hpp"
#include "conformal/core.hpp"
#include "conformal/io.hpp"
#include "conformal/martingale.hpp"
#include "conformal/metrics.hpp"
#include "conformal/models.hpp"
#include "conformal/resample.hpp"
#include "conformal/scores.hpp"
#include "conformal/synthlab.hpp"
