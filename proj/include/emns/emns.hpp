#pragma once

#include "emns/common.hpp"
#include "emns/magmodel.hpp"
#include "emns/dynamics.hpp"
#include "emns/alloc.hpp"
#include "emns/control.hpp"
#include "emns/sim.hpp"
#include "emns/workspace.hpp"
#include "emns/config.hpp"
#include "emns/report.hpp"
#include "emns/cli.hpp"
