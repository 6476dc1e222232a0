#pragma once

// Everything: tensors and autodiff, networks, the three models, data
// pipeline, optimizer, configs, checkpoints and the experiment harness.

#include "ssvaer/tensor.hpp"
#include "ssvaer/autodiff.hpp"
#include "ssvaer/nn.hpp"
#include "ssvaer/variational.hpp"
#include "ssvaer/batch.hpp"
#include "ssvaer/models.hpp"
#include "ssvaer/optimizer.hpp"
#include "ssvaer/dataset.hpp"
#include "ssvaer/config.hpp"
#include "ssvaer/checkpoint.hpp"
#include "ssvaer/harness.hpp"
