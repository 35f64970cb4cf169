#pragma once

#include "ddqos/control.hpp"
#include "ddqos/errors.hpp"
#include "ddqos/experiments.hpp"
#include "ddqos/load_model.hpp"
#include "ddqos/mean_field.hpp"
#include "ddqos/qos.hpp"
#include "ddqos/results_io.hpp"
#include "ddqos/sim_config.hpp"
#include "ddqos/signals.hpp"
#include "ddqos/simulation.hpp"
#include "ddqos/spectral.hpp"
#include "ddqos/statistics.hpp"
