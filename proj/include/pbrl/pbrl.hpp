#pragma once

#include "pbrl/core.hpp"
#include "pbrl/nn.hpp"
#include "pbrl/env.hpp"
#include "pbrl/replay.hpp"
#include "pbrl/reward_model.hpp"
#include "pbrl/reed.hpp"
#include "pbrl/teachers.hpp"
#include "pbrl/query_selection.hpp"
#include "pbrl/agent.hpp"
#include "pbrl/config.hpp"
#include "pbrl/orchestrator.hpp"
