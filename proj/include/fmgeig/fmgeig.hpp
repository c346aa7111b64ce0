#pragma once

#include "fmgeig/errors.hpp"
#include "fmgeig/work.hpp"
#include "fmgeig/vector_ops.hpp"
#include "fmgeig/csr_matrix.hpp"
#include "fmgeig/dense.hpp"
#include "fmgeig/mesh.hpp"
#include "fmgeig/quadrature.hpp"
#include "fmgeig/fem.hpp"
#include "fmgeig/linalg.hpp"
#include "fmgeig/discretization.hpp"
#include "fmgeig/eigsolve.hpp"
#include "fmgeig/fmg.hpp"
#include "fmgeig/harness.hpp"
