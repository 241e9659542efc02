#pragma once

// Umbrella header for the whole library.

#include "vgl/approximator.hpp"
#include "vgl/config.hpp"
#include "vgl/core.hpp"
#include "vgl/learners.hpp"
#include "vgl/model.hpp"
#include "vgl/numdiff.hpp"
#include "vgl/policy.hpp"
#include "vgl/report.hpp"
#include "vgl/targets.hpp"
#include "vgl/verify.hpp"
#include "vgl/weights_io.hpp"
