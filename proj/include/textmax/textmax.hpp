#pragma once

#include "textmax/analytics.hpp"
#include "textmax/config.hpp"
#include "textmax/engine.hpp"
#include "textmax/model.hpp"
#include "textmax/parallel.hpp"
#include "textmax/probe.hpp"
#include "textmax/record_io.hpp"
#include "textmax/toy.hpp"
#include "textmax/weights_io.hpp"
