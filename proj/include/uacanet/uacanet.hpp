#pragma once

#include "uacanet/tensor.hpp"
#include "uacanet/ops.hpp"
#include "uacanet/grad_check.hpp"
#include "uacanet/nn.hpp"
#include "uacanet/attention.hpp"
#include "uacanet/uaca.hpp"
#include "uacanet/model.hpp"
#include "uacanet/losses.hpp"
#include "uacanet/metrics.hpp"
#include "uacanet/pnm.hpp"
#include "uacanet/dataset.hpp"
#include "uacanet/augment.hpp"
#include "uacanet/training.hpp"
#include "uacanet/checkpoint.hpp"
#include "uacanet/evaluate.hpp"
#include "uacanet/config.hpp"
