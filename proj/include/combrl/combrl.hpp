#pragma once

#include "combrl/agents.hpp"
#include "combrl/config.hpp"
#include "combrl/env.hpp"
#include "combrl/gp.hpp"
#include "combrl/harness.hpp"
#include "combrl/icem.hpp"
#include "combrl/objective.hpp"
