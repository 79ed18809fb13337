#pragma once

#include "iln/autodiff.hpp"
#include "iln/dataset.hpp"
#include "iln/encoder.hpp"
#include "iln/errors.hpp"
#include "iln/grad_check.hpp"
#include "iln/heads.hpp"
#include "iln/io.hpp"
#include "iln/metrics.hpp"
#include "iln/ops.hpp"
#include "iln/optim.hpp"
#include "iln/parallel.hpp"
#include "iln/plot.hpp"
#include "iln/range_core.hpp"
#include "iln/rng.hpp"
#include "iln/scene_sim.hpp"
#include "iln/tensor.hpp"
#include "iln/train.hpp"
