#pragma once

#include <Eigen/Dense>

#include <string>

#include "heca/panel.hpp"

namespace testing_support {

// Complete panel from a forecast matrix and targets, quarters from 2000Q1.
inline heca::ForecastPanel make_panel(const Eigen::MatrixXd& f, const Eigen::VectorXd& y) {
  heca::ForecastPanel p;
  for (Eigen::Index t = 0; t < f.rows(); ++t) p.periods.push_back(heca::quarter_label(2000 * 4 + t));
  for (Eigen::Index m = 0; m < f.cols(); ++m) p.experts.push_back("x" + std::to_string(m + 1));
  p.values = f;
  p.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(f.rows(), f.cols(), true);
  p.target = y;
  return p;
}

}  // namespace testing_support
