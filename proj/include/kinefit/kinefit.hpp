// kinefit - articulated kinematic-tree model fitting
// SPDX-License-Identifier: MIT

#pragma once

#include "kinefit/bench.hpp"
#include "kinefit/errors.hpp"
#include "kinefit/geometry.hpp"
#include "kinefit/model.hpp"
#include "kinefit/optimizer.hpp"
#include "kinefit/residuals.hpp"
#include "kinefit/serialization.hpp"
#include "kinefit/solver_dense.hpp"
#include "kinefit/solver_sparse.hpp"
#include "kinefit/synthetic.hpp"
