// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "shardgrad/core.hpp"
#include "shardgrad/tensor.hpp"
#include "shardgrad/network.hpp"
#include "shardgrad/feedforward.hpp"
#include "shardgrad/recurrent.hpp"
#include "shardgrad/optimizer.hpp"
#include "shardgrad/transport.hpp"
#include "shardgrad/model_parallel.hpp"
#include "shardgrad/data_parallel.hpp"
#include "shardgrad/costmodel.hpp"
#include "shardgrad/regret.hpp"
#include "shardgrad/data_io.hpp"
#include "shardgrad/synth.hpp"
#include "shardgrad/cli.hpp"
