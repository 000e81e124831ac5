#pragma once

#include "rankscope/checkpoint.hpp"
#include "rankscope/config.hpp"
#include "rankscope/curve.hpp"
#include "rankscope/curve_io.hpp"
#include "rankscope/data.hpp"
#include "rankscope/losses.hpp"
#include "rankscope/model.hpp"
#include "rankscope/pchip.hpp"
#include "rankscope/plot.hpp"
#include "rankscope/random.hpp"
#include "rankscope/svd.hpp"
#include "rankscope/sweep.hpp"
#include "rankscope/tensor.hpp"
#include "rankscope/train.hpp"
