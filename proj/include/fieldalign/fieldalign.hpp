#pragma once

#include "fieldalign/error.hpp"
#include "fieldalign/geometry.hpp"
#include "fieldalign/covariance.hpp"
#include "fieldalign/kriging.hpp"
#include "fieldalign/similarity.hpp"
#include "fieldalign/random.hpp"
#include "fieldalign/parallel.hpp"
#include "fieldalign/mcmc.hpp"
#include "fieldalign/gpa.hpp"
#include "fieldalign/analysis.hpp"
#include "fieldalign/simulation.hpp"
#include "fieldalign/io.hpp"
#include "fieldalign/cli.hpp"
