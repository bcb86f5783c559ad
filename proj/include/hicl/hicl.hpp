#pragma once

// Umbrella header.

#include "hicl/ablation.hpp"
#include "hicl/checkpoint.hpp"
#include "hicl/common.hpp"
#include "hicl/data.hpp"
#include "hicl/eval.hpp"
#include "hicl/inference.hpp"
#include "hicl/io.hpp"
#include "hicl/losses.hpp"
#include "hicl/memory_bank.hpp"
#include "hicl/model.hpp"
#include "hicl/numeric.hpp"
#include "hicl/rng.hpp"
#include "hicl/taxonomy.hpp"
#include "hicl/tensor.hpp"
#include "hicl/trainer.hpp"
