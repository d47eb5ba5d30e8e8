#pragma once

#include "edpm/baselines.hpp"
#include "edpm/copula.hpp"
#include "edpm/data.hpp"
#include "edpm/gcomp.hpp"
#include "edpm/gibbs.hpp"
#include "edpm/io.hpp"
#include "edpm/model.hpp"
#include "edpm/prob_core.hpp"
#include "edpm/simulation.hpp"
