#pragma once

#include "dmtpp/arlatent.hpp"
#include "dmtpp/autodiff.hpp"
#include "dmtpp/branching.hpp"
#include "dmtpp/checkpoint.hpp"
#include "dmtpp/error.hpp"
#include "dmtpp/evalkit.hpp"
#include "dmtpp/events.hpp"
#include "dmtpp/markmodel.hpp"
#include "dmtpp/parallel.hpp"
#include "dmtpp/special.hpp"
#include "dmtpp/stochastics.hpp"
#include "dmtpp/timemodel.hpp"
#include "dmtpp/vi.hpp"
