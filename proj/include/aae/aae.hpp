#pragma once

// Umbrella header: the whole library.

#include "aae/checkpoint.hpp"
#include "aae/config.hpp"
#include "aae/dataset.hpp"
#include "aae/errors.hpp"
#include "aae/eval.hpp"
#include "aae/model.hpp"
#include "aae/net.hpp"
#include "aae/priors.hpp"
#include "aae/rng.hpp"
#include "aae/runner.hpp"
#include "aae/tensor.hpp"
#include "aae/train.hpp"
#include "aae/viz.hpp"
