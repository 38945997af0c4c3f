#pragma once

// Umbrella header for the SF-Net library.

#include "sfnet/backbone.hpp"
#include "sfnet/common.hpp"
#include "sfnet/cross_fusion.hpp"
#include "sfnet/data_io.hpp"
#include "sfnet/gradcheck.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/pca.hpp"
#include "sfnet/serialize.hpp"
#include "sfnet/sparse_attention.hpp"
#include "sfnet/tensor.hpp"
#include "sfnet/train_eval.hpp"
