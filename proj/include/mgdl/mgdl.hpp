#pragma once

#include "mgdl/error.hpp"
#include "mgdl/function_model.hpp"
#include "mgdl/cutoff_geometry.hpp"
#include "mgdl/contraction.hpp"
#include "mgdl/network.hpp"
#include "mgdl/refine.hpp"
#include "mgdl/trainer.hpp"
#include "mgdl/verify.hpp"
#include "mgdl/oracle.hpp"
