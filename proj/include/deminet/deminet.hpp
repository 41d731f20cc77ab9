#pragma once

#include "deminet/core.hpp"
#include "deminet/tensor.hpp"
#include "deminet/ops.hpp"
#include "deminet/gradcheck.hpp"
#include "deminet/rng.hpp"
#include "deminet/params.hpp"
#include "deminet/seqgraph.hpp"
#include "deminet/hga.hpp"
#include "deminet/interest.hpp"
#include "deminet/aggregate.hpp"
#include "deminet/losses.hpp"
#include "deminet/optimizer.hpp"
#include "deminet/metrics.hpp"
#include "deminet/data.hpp"
#include "deminet/synth.hpp"
#include "deminet/model.hpp"
#include "deminet/config.hpp"
