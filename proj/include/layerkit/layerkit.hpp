#pragma once

#include "layerkit/attention.hpp"
#include "layerkit/decomposition.hpp"
#include "layerkit/errors.hpp"
#include "layerkit/fusion.hpp"
#include "layerkit/geometry.hpp"
#include "layerkit/grid.hpp"
#include "layerkit/grid_io.hpp"
#include "layerkit/layer_engine.hpp"
#include "layerkit/rng.hpp"
#include "layerkit/scenario_io.hpp"
#include "layerkit/schedule.hpp"
#include "layerkit/thread_pool.hpp"
