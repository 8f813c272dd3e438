#pragma once

#include "bass/architecture.hpp"
#include "bass/data.hpp"
#include "bass/error.hpp"
#include "bass/gradcheck.hpp"
#include "bass/layers.hpp"
#include "bass/metrics.hpp"
#include "bass/tensor.hpp"
#include "bass/thematic_map.hpp"
#include "bass/training.hpp"
