#pragma once

#include "tgpt/autodiff.hpp"
#include "tgpt/baselines.hpp"
#include "tgpt/checkpoint.hpp"
#include "tgpt/conformal.hpp"
#include "tgpt/error.hpp"
#include "tgpt/evaluation.hpp"
#include "tgpt/forecast.hpp"
#include "tgpt/grad_check.hpp"
#include "tgpt/model.hpp"
#include "tgpt/service.hpp"
#include "tgpt/synthetic.hpp"
#include "tgpt/timeseries.hpp"
#include "tgpt/training.hpp"
