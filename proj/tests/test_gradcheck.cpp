#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "t2i/gradcheck.hpp"

using namespace t2i;

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  // Both tiny: the floor keeps the ratio bounded.
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("check_gradients on a known function") {
  // f(x, y) = mean(x * x) + 3 mean(y * y)
  const ScalarGraph g = [](ag::Tape<double>& tape, const std::vector<ag::Var>& in) {
    return ag::weighted_sum(tape, {ag::mean(tape, ag::mul(tape, in[0], in[0])), ag::mean(tape, ag::mul(tape, in[1], in[1]))},
                            std::vector<double>{1.0, 3.0});
  };
  std::size_t checked = 0;
  const double err = check_gradients(g, {{Shape{3}, {0.5, -1.5, 2.0}}, {Shape{1}, {1.25}}}, &checked);
  CHECK(checked == 4);
  CHECK(err < 1e-8);
}

TEST_CASE("identity component is exact; zero tolerance fails everything") {
  const GradcheckReport r = gradcheck({"identity"}, 1e-4);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entry("identity").max_rel_error < 1e-10);
  CHECK(r.all_passed());

  const GradcheckReport z = gradcheck({"identity", "clip_loss"}, 0.0);
  for (const auto& e : z.entries) CHECK_FALSE(e.passed);
  CHECK_THROWS(gradcheck({"nonexistent"}, 1e-4));
}

TEST_CASE("every component passes at 1e-4 on the micro model") {
  const GradcheckReport r = gradcheck({}, 1e-4);
  CHECK(r.entries.size() == gradcheck_components().size());
  for (const auto& e : r.entries) {
    INFO(e.component, " max rel error ", e.max_rel_error);
    CHECK(e.passed);
    CHECK(e.checked > 0);
    CHECK(e.parameters <= 5000);
  }
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["tolerance"] == 1e-4);
  CHECK(j["components"].size() == r.entries.size());
}
