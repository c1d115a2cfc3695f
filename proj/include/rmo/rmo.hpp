#pragma once

#include "rmo/autodiff.hpp"
#include "rmo/baselines.hpp"
#include "rmo/checkpoint.hpp"
#include "rmo/error.hpp"
#include "rmo/evaluation.hpp"
#include "rmo/gradcheck.hpp"
#include "rmo/linalg.hpp"
#include "rmo/manifold.hpp"
#include "rmo/matrix.hpp"
#include "rmo/memory_model.hpp"
#include "rmo/meta_trainer.hpp"
#include "rmo/random.hpp"
#include "rmo/recurrent_net.hpp"
#include "rmo/subspace_optimizer.hpp"
#include "rmo/tasks.hpp"
