#pragma once

// Umbrella header for the rigidreg registration engine.

#include "rigidreg/config.hpp"
#include "rigidreg/core.hpp"
#include "rigidreg/field.hpp"
#include "rigidreg/io.hpp"
#include "rigidreg/metrics.hpp"
#include "rigidreg/objective.hpp"
#include "rigidreg/optimizer.hpp"
#include "rigidreg/phantom.hpp"
#include "rigidreg/rigidity.hpp"
#include "rigidreg/similarity.hpp"
#include "rigidreg/volume.hpp"
