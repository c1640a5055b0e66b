#pragma once

#include "hierpi/errors.hpp"
#include "hierpi/types.hpp"
#include "hierpi/hiercore.hpp"
#include "hierpi/tasks.hpp"
#include "hierpi/rng.hpp"
#include "hierpi/parallel.hpp"
#include "hierpi/dynamics.hpp"
#include "hierpi/path_integral.hpp"
#include "hierpi/scenario.hpp"
#include "hierpi/episode.hpp"
#include "hierpi/io.hpp"
#include "hierpi/oracles.hpp"
