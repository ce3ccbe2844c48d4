#pragma once

#include "redundancy/activation_store.hpp"
#include "redundancy/dataset.hpp"
#include "redundancy/error.hpp"
#include "redundancy/gradcheck.hpp"
#include "redundancy/mimic.hpp"
#include "redundancy/network.hpp"
#include "redundancy/nn.hpp"
#include "redundancy/pipeline.hpp"
#include "redundancy/pruning.hpp"
#include "redundancy/similarity.hpp"
#include "redundancy/timing.hpp"
#include "redundancy/toy_model.hpp"
#include "redundancy/training.hpp"
