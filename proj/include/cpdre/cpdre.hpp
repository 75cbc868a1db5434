#pragma once

#include "duality.hpp"
#include "engine.hpp"
#include "essential.hpp"
#include "graphical.hpp"
#include "harness.hpp"
#include "lattice.hpp"
#include "model.hpp"
#include "observables.hpp"
#include "oracle.hpp"
#include "percolation.hpp"
#include "presets.hpp"
#include "rng.hpp"
#include "stats.hpp"
