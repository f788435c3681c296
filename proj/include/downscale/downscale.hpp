#pragma once

#include "downscale/container.hpp"
#include "downscale/date.hpp"
#include "downscale/errors.hpp"
#include "downscale/evaluation.hpp"
#include "downscale/grid.hpp"
#include "downscale/models.hpp"
#include "downscale/nn.hpp"
#include "downscale/pgm.hpp"
#include "downscale/preprocess.hpp"
#include "downscale/runconfig.hpp"
#include "downscale/saliency.hpp"
#include "downscale/synth.hpp"
#include "downscale/tensor.hpp"
#include "downscale/train.hpp"
