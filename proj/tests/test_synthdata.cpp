#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "fcraft/synthdata.hpp"

using namespace fcraft;
using namespace fcraft::synthdata;

namespace {

double pixel_correlation(const Tensor& imgs, std::size_t i, std::size_t j) {
  const std::size_t d = imgs.cols();
  double mi = 0, mj = 0;
  for (std::size_t c = 0; c < d; ++c) {
    mi += imgs.at(i, c);
    mj += imgs.at(j, c);
  }
  mi /= double(d);
  mj /= double(d);
  double num = 0, di = 0, dj = 0;
  for (std::size_t c = 0; c < d; ++c) {
    const double a = imgs.at(i, c) - mi;
    const double b = imgs.at(j, c) - mj;
    num += a * b;
    di += a * a;
    dj += b * b;
  }
  return num / (std::sqrt(di * dj) + 1e-30);
}

}  // namespace

TEST_CASE("generate_dataset is bitwise deterministic in the seed") {
  DataConfig cfg;
  cfg.n_identities = 6;
  cfg.images_per_identity = 4;
  Dataset a = generate_dataset(cfg, 42);
  Dataset b = generate_dataset(cfg, 42);
  CHECK(a.images.bitwise_equal(b.images));
  CHECK(a.ids == b.ids);
  CHECK(a.attrs == b.attrs);

  Dataset c = generate_dataset(cfg, 43);
  CHECK_FALSE(a.images.bitwise_equal(c.images));
}

TEST_CASE("generated pixels stay in [0,1] and labels are well formed") {
  DataConfig cfg;
  cfg.n_identities = 8;
  cfg.images_per_identity = 5;
  Dataset d = generate_dataset(cfg, 7);
  REQUIRE(d.count() == 40);
  REQUIRE(d.dims() == cfg.side * cfg.side);
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    CHECK(d.images[i] >= 0.0);
    CHECK(d.images[i] <= 1.0);
  }
  for (std::size_t i = 0; i < d.count(); ++i) {
    CHECK(d.ids[i] == int(i / cfg.images_per_identity));
    CHECK((d.attrs[i] == 0 || d.attrs[i] == 1));
  }
}

TEST_CASE("both attribute classes are present, per identity, by construction") {
  DataConfig cfg;
  cfg.n_identities = 2;
  cfg.images_per_identity = 4;
  Dataset d = generate_dataset(cfg, 3);
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < d.count(); ++i) {
      if (d.ids[i] != int(id)) continue;
      (d.attrs[i] ? has1 : has0) = true;
    }
    CHECK(has0);
    CHECK(has1);
  }
}

TEST_CASE("same-identity images correlate more than cross-identity images") {
  DataConfig cfg;
  cfg.n_identities = 10;
  cfg.images_per_identity = 6;
  Dataset d = generate_dataset(cfg, 19);
  double same = 0, cross = 0;
  std::size_t n_same = 0, n_cross = 0;
  for (std::size_t i = 0; i < d.count(); ++i) {
    for (std::size_t j = i + 1; j < d.count(); ++j) {
      const double c = pixel_correlation(d.images, i, j);
      if (d.ids[i] == d.ids[j]) {
        same += c;
        n_same += 1;
      } else {
        cross += c;
        n_cross += 1;
      }
    }
  }
  CHECK(same / double(n_same) > cross / double(n_cross));
}

TEST_CASE("split_dataset keeps identity sets disjoint and ratios right") {
  DataConfig cfg;
  cfg.n_identities = 10;
  cfg.images_per_identity = 6;
  Dataset d = generate_dataset(cfg, 5);
  DatasetSplit s = split_dataset(d, 0.5, 2.0, 11);

  std::set<int> pub_ids(s.x_pub.ids.begin(), s.x_pub.ids.end());
  std::set<int> pvt_ids(s.x_train.ids.begin(), s.x_train.ids.end());
  std::set<int> test_ids(s.x_test.ids.begin(), s.x_test.ids.end());
  CHECK(pub_ids.size() == 5);
  CHECK(pvt_ids.size() == 5);
  // No identity overlap between public and private; train and test cover the
  // same private identities.
  for (int id : pvt_ids) CHECK(pub_ids.count(id) == 0);
  CHECK(pvt_ids == test_ids);

  // 6 images at ratio 2:1 -> 4 train, 2 test for every private identity.
  for (int id : pvt_ids) {
    const auto n_train = std::count(s.x_train.ids.begin(), s.x_train.ids.end(), id);
    const auto n_test = std::count(s.x_test.ids.begin(), s.x_test.ids.end(), id);
    CHECK(n_train == 4);
    CHECK(n_test == 2);
  }
  CHECK(s.x_pub.count() + s.x_train.count() + s.x_test.count() == d.count());
}

TEST_CASE("split_dataset is deterministic and refuses impossible splits") {
  DataConfig cfg;
  cfg.n_identities = 6;
  cfg.images_per_identity = 3;
  Dataset d = generate_dataset(cfg, 2);
  DatasetSplit a = split_dataset(d, 0.5, 2.0, 9);
  DatasetSplit b = split_dataset(d, 0.5, 2.0, 9);
  CHECK(a.x_pub.images.bitwise_equal(b.x_pub.images));
  CHECK(a.x_train.images.bitwise_equal(b.x_train.images));
  CHECK(a.x_test.images.bitwise_equal(b.x_test.images));
  CHECK(a.x_train.ids == b.x_train.ids);

  CHECK_THROWS_AS(split_dataset(d, 0.0, 2.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(d, 1.0, 2.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(d, 0.5, 0.0, 1), std::invalid_argument);
}

TEST_CASE("normalize_to_reference matches moments exactly") {
  DataConfig cfg;
  cfg.n_identities = 4;
  cfg.images_per_identity = 3;
  Dataset a = generate_dataset(cfg, 21);
  Dataset b = generate_dataset(cfg, 22);

  Tensor out = normalize_to_reference(a.images, b.images);
  auto moments = [](const Tensor& t) {
    double m = 0;
    for (std::size_t i = 0; i < t.size(); ++i) m += t[i];
    m /= double(t.size());
    double v = 0;
    for (std::size_t i = 0; i < t.size(); ++i) v += (t[i] - m) * (t[i] - m);
    return std::pair<double, double>(m, v / double(t.size()));
  };
  const auto [mo, vo] = moments(out);
  const auto [mr, vr] = moments(b.images);
  CHECK(std::fabs(mo - mr) < 1e-10);
  CHECK(std::fabs(vo - vr) < 1e-10);

  // Reference equal to input leaves it untouched up to roundoff.
  Tensor same = normalize_to_reference(a.images, a.images);
  for (std::size_t i = 0; i < same.size(); ++i)
    CHECK(std::fabs(same[i] - a.images[i]) < 1e-12);
}

TEST_CASE("normalize_to_reference follows the affine law and refuses flat input") {
  // Synthetic population with known moments: mean 0, var 1.
  Tensor x({2, 2});
  x[0] = -1;
  x[1] = 1;
  x[2] = -1;
  x[3] = 1;
  // Reference with mean 0.5, var 0.25.
  Tensor ref({2, 2});
  ref[0] = 0.0;
  ref[1] = 1.0;
  ref[2] = 0.0;
  ref[3] = 1.0;
  Tensor out = normalize_to_reference(x, ref);
  CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor flat({2, 2}, 0.3);
  CHECK_THROWS_AS(normalize_to_reference(flat, ref), std::invalid_argument);
}

TEST_CASE("normalize_to_reference shrinks the 1-D pixel-marginal transport cost") {
  // In 1-D the optimal transport between equal-size sets is the sorted
  // matching; moment matching must not increase that distance to the
  // reference's pixel population.
  DataConfig cfg;
  cfg.n_identities = 3;
  cfg.images_per_identity = 3;
  Dataset a = generate_dataset(cfg, 31);
  Dataset b = generate_dataset(cfg, 77);
  // Push the input away from the reference so there is something to fix.
  Tensor shifted(a.images.shape());
  for (std::size_t i = 0; i < shifted.size(); ++i)
    shifted[i] = 0.5 * a.images[i] + 0.4;

  auto sorted_match_cost = [](const Tensor& p, const Tensor& q) {
    std::vector<double> sp(p.data(), p.data() + p.size());
    std::vector<double> sq(q.data(), q.data() + q.size());
    std::sort(sp.begin(), sp.end());
    std::sort(sq.begin(), sq.end());
    double c = 0;
    for (std::size_t i = 0; i < sp.size(); ++i) c += std::fabs(sp[i] - sq[i]);
    return c / double(sp.size());
  };

  Tensor fixed = normalize_to_reference(shifted, b.images);
  CHECK(sorted_match_cost(fixed, b.images) <=
        sorted_match_cost(shifted, b.images));
}

TEST_CASE("dataset dump and load round-trip bitwise") {
  DataConfig cfg;
  cfg.n_identities = 3;
  cfg.images_per_identity = 4;
  Dataset d = generate_dataset(cfg, 13);
  const char* path = "synthdata_roundtrip.bin";
  dump_dataset(path, d);
  Dataset r = load_dataset(path);
  CHECK(r.images.bitwise_equal(d.images));
  CHECK(r.ids == d.ids);
  CHECK(r.attrs == d.attrs);
  CHECK(r.side == d.side);
  std::remove(path);
}
