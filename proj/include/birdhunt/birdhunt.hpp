#pragma once

#include "birdhunt/common.hpp"
#include "birdhunt/env.hpp"
#include "birdhunt/nn.hpp"
#include "birdhunt/policy.hpp"
#include "birdhunt/rollout.hpp"
#include "birdhunt/ppo.hpp"
#include "birdhunt/sac.hpp"
#include "birdhunt/demo.hpp"
#include "birdhunt/bc.hpp"
#include "birdhunt/gail.hpp"
#include "birdhunt/compose.hpp"
#include "birdhunt/harness.hpp"
