#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pmf::gradcheck {

struct OpReport {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline constexpr double kTolerance = 1e-4;
inline constexpr double kFdStep = 1e-5;

// Central-difference check of every differentiable operation plus the full
// miniature two-stream objectives (with and without the perception term).
// Relative error is |fd - tape| / max(1, |fd|, |tape|).
std::vector<OpReport> run_all(uint64_t seed);

bool all_pass(const std::vector<OpReport>& reports);

}  // namespace pmf::gradcheck
