#pragma once

#include "error.hpp"
#include "expr.hpp"
#include "quadrature.hpp"
#include "map_model.hpp"
#include "piecewise.hpp"
#include "spectrum.hpp"
#include "affine_resonances.hpp"
#include "exact.hpp"
#include "random_maps.hpp"
#include "correlation.hpp"
#include "smooth_spectral.hpp"
#include "monotone_mme.hpp"
#include "parallel.hpp"
#include "io.hpp"
