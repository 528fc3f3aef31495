#pragma once

#include "glmpo2pls/em_binary.hpp"
#include "glmpo2pls/em_gaussian.hpp"
#include "glmpo2pls/error.hpp"
#include "glmpo2pls/inference.hpp"
#include "glmpo2pls/io.hpp"
#include "glmpo2pls/linalg.hpp"
#include "glmpo2pls/model.hpp"
#include "glmpo2pls/quadrature.hpp"
#include "glmpo2pls/simbench.hpp"
#include "glmpo2pls/simulate.hpp"
