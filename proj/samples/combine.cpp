// Forms the egalitarian committees for one round of a panel and prints each
// committee's members, selected lambda and forecast.
//
//   heca_sample samples/synthetic_panel.csv 30

#include <cstdlib>
#include <iostream>

#include "heca/heca.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: " << argv[0] << " panel.csv [round]\n";
    return 2;
  }
  try {
    const heca::ForecastPanel panel = heca::impute_missing(heca::filter_experts(heca::load_panel(argv[1])));
    heca::CommitteeConfig cfg;
    cfg.lambda_grid = heca::parse_grid("0.05:0.05:1");
    const std::size_t t = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : heca::first_committee_round(cfg);
    const heca::CommitteeForecasts r = heca::committee_round(panel, t, cfg);
    std::cout << "round " << r.t << " (" << r.period << ")\n";
    for (std::size_t c = 0; c < r.members.size(); ++c) {
      std::cout << "  c=" << c + 1 << "  lambda=" << r.lambda_hat[static_cast<Eigen::Index>(c)]
                << "  yhat=" << r.yhat[static_cast<Eigen::Index>(c)] << "  members:";
      for (std::size_t j : r.members[c]) std::cout << ' ' << panel.experts[j];
      std::cout << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return heca::exit_code(e);
  }
  return 0;
}
