#pragma once

#include "synthbase/augmentation.hpp"
#include "synthbase/benchmarks.hpp"
#include "synthbase/bess_lp.hpp"
#include "synthbase/config.hpp"
#include "synthbase/csv.hpp"
#include "synthbase/demo_panel.hpp"
#include "synthbase/errors.hpp"
#include "synthbase/evalkit.hpp"
#include "synthbase/factor_lab.hpp"
#include "synthbase/nonlinear_scm.hpp"
#include "synthbase/panel_store.hpp"
#include "synthbase/parallel.hpp"
#include "synthbase/scm_solver.hpp"
#include "synthbase/simplex_lp.hpp"
#include "synthbase/timeutil.hpp"
