#pragma once

#include "meanspace/config.hpp"
#include "meanspace/diffeo.hpp"
#include "meanspace/error.hpp"
#include "meanspace/io.hpp"
#include "meanspace/metrics.hpp"
#include "meanspace/objective.hpp"
#include "meanspace/optim.hpp"
#include "meanspace/parallel.hpp"
#include "meanspace/phantom.hpp"
#include "meanspace/report.hpp"
#include "meanspace/segment.hpp"
#include "meanspace/volume.hpp"
