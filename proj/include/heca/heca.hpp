#pragma once

#include "heca/committees.hpp"
#include "heca/error.hpp"
#include "heca/experiment.hpp"
#include "heca/numeric.hpp"
#include "heca/online.hpp"
#include "heca/panel.hpp"
#include "heca/parallel.hpp"
#include "heca/ridge_qp.hpp"
#include "heca/subset_select.hpp"
#include "heca/synthetic.hpp"
