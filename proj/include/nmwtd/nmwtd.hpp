#pragma once

#include "nmwtd/core.hpp"
#include "nmwtd/rates.hpp"
#include "nmwtd/systems.hpp"
#include "nmwtd/deterministic.hpp"
#include "nmwtd/jump_process.hpp"
#include "nmwtd/decomposition.hpp"
#include "nmwtd/master_equation.hpp"
#include "nmwtd/wtd.hpp"
#include "nmwtd/random.hpp"
#include "nmwtd/ensemble.hpp"
