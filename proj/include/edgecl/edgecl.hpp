#pragma once

#include "edgecl/bundle.hpp"
#include "edgecl/csv.hpp"
#include "edgecl/dataset.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/features.hpp"
#include "edgecl/harness.hpp"
#include "edgecl/losses.hpp"
#include "edgecl/matrix.hpp"
#include "edgecl/network.hpp"
#include "edgecl/report.hpp"
#include "edgecl/rng.hpp"
#include "edgecl/support_set.hpp"
#include "edgecl/trainer.hpp"
