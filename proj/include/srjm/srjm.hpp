#pragma once

#include "srjm/baselines.hpp"
#include "srjm/core_model.hpp"
#include "srjm/covariance.hpp"
#include "srjm/em.hpp"
#include "srjm/embedding.hpp"
#include "srjm/experiment.hpp"
#include "srjm/glasso.hpp"
#include "srjm/io.hpp"
#include "srjm/lasso.hpp"
#include "srjm/metrics.hpp"
#include "srjm/model_selection.hpp"
#include "srjm/oas.hpp"
#include "srjm/parallel.hpp"
#include "srjm/simgen.hpp"
#include "srjm/sparse_final.hpp"
#include "srjm/types.hpp"
