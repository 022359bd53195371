#include <doctest.h>

#include "sdb/errors.hpp"
#include "sdb/schedule.hpp"

using namespace sdb;

TEST_CASE("120-epoch preset table") {
  const Schedule s = Schedule::preset120();
  CHECK(lr_at(0, s) == 3.5e-5);
  CHECK(lr_at(10, s) == 3.5e-4);
  CHECK(lr_at(40, s) == 3.5e-4);
  CHECK(lr_at(41, s) == 3.5e-5);
  CHECK(lr_at(65, s) == 3.5e-5);
  CHECK(lr_at(66, s) == 3.5e-6);
  CHECK(lr_at(70, s) == 3.5e-6);
  CHECK(lr_at(119, s) == 3.5e-6);
  CHECK(lr_at(5, s) == doctest::Approx(1.925e-4).epsilon(1e-12));
}

TEST_CASE("warm-up is linear and monotone") {
  const Schedule s = Schedule::preset120();
  double prev = 0;
  for (double e = 0; e <= 10; e += 0.5) {
    const double lr = lr_at(e, s);
    CHECK(lr > prev);
    CHECK(lr == doctest::Approx(3.5e-5 + (3.5e-4 - 3.5e-5) * e / 10).epsilon(1e-12));
    prev = lr;
  }
}

TEST_CASE("150-epoch preset is valid and ends decayed") {
  const Schedule s = Schedule::preset150();
  CHECK_NOTHROW(s.validate());
  CHECK(s.total_epochs == 150);
  CHECK(lr_at(149, s) < lr_at(20, s));
}

TEST_CASE("invalid schedules") {
  Schedule s = Schedule::preset120();
  s.decay1_epoch = 70;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = Schedule::preset120();
  s.peak_lr = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}
