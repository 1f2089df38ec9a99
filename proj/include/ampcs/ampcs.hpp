#pragma once

#include "ampcs/errors.hpp"
#include "ampcs/rng.hpp"
#include "ampcs/gaussian.hpp"
#include "ampcs/prior.hpp"
#include "ampcs/operator.hpp"
#include "ampcs/instance.hpp"
#include "ampcs/nonlinearity.hpp"
#include "ampcs/policy.hpp"
#include "ampcs/amp.hpp"
#include "ampcs/state_evolution.hpp"
#include "ampcs/lasso.hpp"
#include "ampcs/parallel.hpp"
#include "ampcs/experiments.hpp"
