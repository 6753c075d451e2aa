// Umbrella header for the whole library.
#pragma once

#include "raliflow/bevgrid.hpp"
#include "raliflow/checkpoint.hpp"
#include "raliflow/config.hpp"
#include "raliflow/conv.hpp"
#include "raliflow/dataset.hpp"
#include "raliflow/dbcf.hpp"
#include "raliflow/error.hpp"
#include "raliflow/flow_head.hpp"
#include "raliflow/geom.hpp"
#include "raliflow/grad_check.hpp"
#include "raliflow/labelgen.hpp"
#include "raliflow/losses.hpp"
#include "raliflow/metrics.hpp"
#include "raliflow/model.hpp"
#include "raliflow/optim.hpp"
#include "raliflow/pipeline.hpp"
#include "raliflow/preprocess.hpp"
#include "raliflow/rng.hpp"
#include "raliflow/synthgen.hpp"
#include "raliflow/tensor.hpp"
#include "raliflow/unet.hpp"
