#pragma once

#include "spottrip/autodiff.hpp"
#include "spottrip/checkpoint.hpp"
#include "spottrip/config.hpp"
#include "spottrip/data.hpp"
#include "spottrip/fusion.hpp"
#include "spottrip/kg_static.hpp"
#include "spottrip/metrics.hpp"
#include "spottrip/model.hpp"
#include "spottrip/nn.hpp"
#include "spottrip/ode_dynamic.hpp"
#include "spottrip/ode_solver.hpp"
#include "spottrip/plot.hpp"
#include "spottrip/synthetic.hpp"
#include "spottrip/trainer.hpp"
