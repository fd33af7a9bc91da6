// Finite-difference verification of every differentiable graph operation.
// The acceptance suite reruns the same checks at 50 instances per op; the
// unit run uses fewer to stay fast.
#include "doctest.h"
#include "gradcheck_common.hpp"

namespace {
constexpr int kUnitInstances = 8;
constexpr uint64_t kMasterSeed = 20240611;
}  // namespace

TEST_CASE("finite differences confirm every op gradient") {
  for (const auto& [name, check] : gradcheck::all_op_checks()) {
    CAPTURE(name);
    const double err = gradcheck::run_check(check, kUnitInstances, kMasterSeed);
    CHECK_MESSAGE(err <= 1e-4, name, " max relative error ", err);
  }
}

TEST_CASE("finite differences confirm encoder and decoder composites") {
  for (const auto& [name, check] : gradcheck::model_composite_checks()) {
    CAPTURE(name);
    const double err = gradcheck::run_check(check, 3, kMasterSeed);
    CHECK_MESSAGE(err <= 1e-4, name, " max relative error ", err);
  }
}
