#pragma once

#include "firalkit/errors.hpp"
#include "firalkit/parallel.hpp"
#include "firalkit/numkit.hpp"
#include "firalkit/logistic.hpp"
#include "firalkit/fisher.hpp"
#include "firalkit/relax.hpp"
#include "firalkit/round.hpp"
#include "firalkit/harness/io.hpp"
#include "firalkit/harness/synthetic.hpp"
#include "firalkit/harness/selectors.hpp"
#include "firalkit/harness/config.hpp"
#include "firalkit/harness/experiment.hpp"
#include "firalkit/harness/verify.hpp"
#include "firalkit/harness/bench.hpp"
