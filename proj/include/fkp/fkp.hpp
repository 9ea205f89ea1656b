#pragma once

#include "fkp/analytics.hpp"
#include "fkp/field.hpp"
#include "fkp/kernel.hpp"
#include "fkp/lemmas.hpp"
#include "fkp/mild_oracle.hpp"
#include "fkp/model.hpp"
#include "fkp/numeric.hpp"
#include "fkp/parallel.hpp"
#include "fkp/particle_solver.hpp"
#include "fkp/registry.hpp"
#include "fkp/rng.hpp"
#include "fkp/sde.hpp"
#include "fkp/transition.hpp"
