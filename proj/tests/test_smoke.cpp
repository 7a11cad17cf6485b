#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mmtod/tensor.hpp"

TEST_CASE("tensor basics") {
  mmtod::Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  t.at(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK(t.all_finite());
}
