#pragma once

#include "dora/agreement.hpp"
#include "dora/checkpoint.hpp"
#include "dora/co_attention.hpp"
#include "dora/data_model.hpp"
#include "dora/encoders.hpp"
#include "dora/evaluation.hpp"
#include "dora/metrics.hpp"
#include "dora/model.hpp"
#include "dora/pipeline.hpp"
#include "dora/run_config.hpp"
#include "dora/tensor.hpp"
#include "dora/training.hpp"
