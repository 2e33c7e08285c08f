#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "q2p/gradcheck.hpp"

namespace q2p {

struct GradSuiteCase {
  std::string name;
  double epsilon;
  GradCheckReport report;
};

// 64-bit finite-difference sweep on a 5-entity, 3-relation graph with d=6:
// each neural operation scalarized on its own, then four single-query losses,
// one per operation. Probes every parameter coordinate plus explicit particle
// inputs. Single-query losses keep all reachable gradients above the probe's
// rounding noise, which is what makes a tight bound on the result measurable;
// they run at a wider epsilon than the raw operations to clear kink windows.
std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed, std::size_t K);

}  // namespace q2p
