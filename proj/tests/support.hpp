#pragma once

#include <cstdint>
#include <random>

#include <doctest.h>

#include "glsasm/error.hpp"
#include "glsasm/shape.hpp"

namespace testing {

inline glsasm::LandmarkVector random_shape(std::mt19937_64& rng, int n, double spread = 10.0) {
  std::normal_distribution<double> normal(0.0, spread);
  glsasm::LandmarkVector k(n);
  for (int i = 0; i < n; ++i) k[i] = {normal(rng), normal(rng)};
  return k;
}

inline glsasm::Complex random_complex(std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> normal(0.0, spread);
  return {normal(rng), normal(rng)};
}

}  // namespace testing

#define CHECK_ERROR_KIND(expr, expected_kind)                        \
  do {                                                               \
    bool thrown_ = false;                                            \
    try {                                                            \
      (void)(expr);                                                  \
    } catch (const glsasm::Error& e_) {                              \
      thrown_ = true;                                                \
      CHECK_MESSAGE(e_.kind() == (expected_kind), e_.what());        \
    }                                                                \
    CHECK_MESSAGE(thrown_, "expected an error from " #expr);         \
  } while (false)
