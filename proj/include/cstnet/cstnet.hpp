#pragma once

#include "cstnet/checkpoint.hpp"
#include "cstnet/color_stats.hpp"
#include "cstnet/color_transform.hpp"
#include "cstnet/config.hpp"
#include "cstnet/data.hpp"
#include "cstnet/error.hpp"
#include "cstnet/gradcheck.hpp"
#include "cstnet/kernels.hpp"
#include "cstnet/layers.hpp"
#include "cstnet/network.hpp"
#include "cstnet/optim.hpp"
#include "cstnet/rng.hpp"
#include "cstnet/tensor.hpp"
#include "cstnet/train.hpp"
