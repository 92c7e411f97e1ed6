#pragma once

#include "lmap/error.hpp"
#include "lmap/geometry.hpp"
#include "lmap/parallel.hpp"
#include "lmap/map.hpp"
#include "lmap/device_store.hpp"
#include "lmap/triangulation.hpp"
#include "lmap/fusion.hpp"
#include "lmap/intake.hpp"
#include "lmap/local_ba.hpp"
#include "lmap/culling.hpp"
#include "lmap/synth.hpp"
#include "lmap/trajectory.hpp"
#include "lmap/pipeline.hpp"
#include "lmap/report.hpp"
