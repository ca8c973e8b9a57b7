#pragma once

#include "ionimp/analyze.hpp"
#include "ionimp/config.hpp"
#include "ionimp/core.hpp"
#include "ionimp/gauss_fit.hpp"
#include "ionimp/image_io.hpp"
#include "ionimp/metrics.hpp"
#include "ionimp/optics.hpp"
#include "ionimp/pipeline.hpp"
#include "ionimp/profiler.hpp"
#include "ionimp/simulator.hpp"
#include "ionimp/tof.hpp"
