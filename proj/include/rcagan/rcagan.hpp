#pragma once

#include "rcagan/checkpoint.hpp"
#include "rcagan/config.hpp"
#include "rcagan/dataset.hpp"
#include "rcagan/degrade.hpp"
#include "rcagan/errors.hpp"
#include "rcagan/image.hpp"
#include "rcagan/inference.hpp"
#include "rcagan/layers.hpp"
#include "rcagan/losses.hpp"
#include "rcagan/metrics.hpp"
#include "rcagan/models.hpp"
#include "rcagan/ops.hpp"
#include "rcagan/optim.hpp"
#include "rcagan/png_io.hpp"
#include "rcagan/resample.hpp"
#include "rcagan/tensor.hpp"
#include "rcagan/trainer.hpp"
