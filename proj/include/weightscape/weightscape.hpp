#pragma once

#include "weightscape/checkpoint.hpp"
#include "weightscape/config.hpp"
#include "weightscape/error.hpp"
#include "weightscape/graph.hpp"
#include "weightscape/kernels.hpp"
#include "weightscape/manifest.hpp"
#include "weightscape/metrics.hpp"
#include "weightscape/parallel.hpp"
#include "weightscape/perturb.hpp"
#include "weightscape/png.hpp"
#include "weightscape/random.hpp"
#include "weightscape/render.hpp"
#include "weightscape/replay.hpp"
#include "weightscape/tensor.hpp"
