#include <crowdsel/data_model.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace crowdsel;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("crowdsel_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

Dataset small(Index n) {
  Matrix x(n, 2);
  VoteMatrix v(n, 2);
  Labels z(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = static_cast<double>(i * i) / 3.0;
    v(i, 0) = static_cast<std::int8_t>(i % 2);
    v(i, 1) = static_cast<std::int8_t>((i / 2) % 2);
    z(i) = static_cast<int>(i % 2);
  }
  return Dataset(x, v, z);
}

}  // namespace

TEST_CASE("csv ingestion without labels") {
  const auto dir = scratch_dir("ingest");
  write(dir / "x.csv", "a,b\n1,2\n3,4\n5,6\n");
  write(dir / "v.csv", "1,0\n0,\n,1\n");
  const Dataset ds = load_csv(dir / "x.csv", dir / "v.csv");
  CHECK(ds.n() == 3);
  CHECK(ds.d() == 2);
  CHECK(ds.k() == 2);
  CHECK_FALSE(ds.has_true_labels());
  CHECK(ds.features()(2, 1) == 6.0);
  CHECK(ds.available(1, 0));
  CHECK_FALSE(ds.available(1, 1));
  CHECK(ds.vote_count(2) == 1);
}

TEST_CASE("empty vote cell means absent") {
  const auto dir = scratch_dir("absent");
  write(dir / "v.csv", "1,,\n");
  const VoteMatrix v = read_vote_csv(dir / "v.csv");
  CHECK(v.cols() == 3);
  CHECK(v(0, 0) == 1);
  CHECK(v(0, 1) == kAbsent);
  CHECK(v(0, 2) == kAbsent);
}

TEST_CASE("bad vote files are rejected") {
  const auto dir = scratch_dir("badvotes");
  write(dir / "two.csv", "2,0\n");
  CHECK_THROWS_AS(read_vote_csv(dir / "two.csv"), ValidationError);
  write(dir / "none.csv", "1,0\n,\n");
  CHECK_THROWS_AS(read_vote_csv(dir / "none.csv"), ValidationError);
  CHECK(read_vote_csv(dir / "none.csv", true).rows() == 2);
  write(dir / "ragged.csv", "1,0\n1\n");
  CHECK_THROWS_AS(read_vote_csv(dir / "ragged.csv"), ValidationError);
}

TEST_CASE("dataset validation") {
  Matrix x = Matrix::Zero(2, 1);
  VoteMatrix v(2, 1);
  v << 1, 0;
  CHECK_NOTHROW(Dataset(x, v));
  CHECK_THROWS_AS(Dataset(Matrix::Zero(3, 1), v), ValidationError);
  Labels z(2);
  z << 0, 2;
  CHECK_THROWS_AS(Dataset(x, v, z), ValidationError);
  x(0, 0) = std::nan("");
  CHECK_THROWS_AS(Dataset(x, v), ValidationError);
}

TEST_CASE("csv round trip is exact") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Matrix x(5, 3);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng) * 1e3;
  VoteMatrix v(5, 2);
  v << 1, 0, kAbsent, 1, 0, 0, 1, kAbsent, 0, 1;
  Labels z(5);
  z << 1, 0, 0, 1, 1;
  const Dataset ds(x, v, z);
  const auto dir = scratch_dir("roundtrip");
  save_csv(ds, dir / "x.csv", dir / "v.csv", dir / "z.csv");
  const Dataset back = load_csv(dir / "x.csv", dir / "v.csv", dir / "z.csv");
  CHECK(back.features() == ds.features());
  CHECK(back.votes() == ds.votes());
  CHECK(*back.true_labels() == *ds.true_labels());
}

TEST_CASE("split cardinality and determinism") {
  const Dataset ds = small(10);
  const auto a = split_indices(ds, {0.3, 7, false});
  CHECK(a.train.size() == 7);
  CHECK(a.test.size() == 3);
  std::set<Index> all(a.train.begin(), a.train.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == 10);
  const auto b = split_indices(ds, {0.3, 7, false});
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);

  const auto clamped = split_indices(ds, {0.999, 7, false});
  CHECK(clamped.train.size() == 1);
  CHECK(clamped.test.size() == 9);

  CHECK_THROWS_AS(split_indices(ds, {0.0, 7, false}), ValidationError);
  CHECK_THROWS_AS(split_indices(ds, {1.0, 7, false}), ValidationError);
}

TEST_CASE("split carries rows and labels along") {
  const Dataset ds = small(12);
  const auto idx = split_indices(ds, {0.25, 1, true});
  const auto [train, test] = split(ds, {0.25, 1, true});
  REQUIRE(test.n() == static_cast<Index>(idx.test.size()));
  for (std::size_t r = 0; r < idx.test.size(); ++r) {
    const Index i = idx.test[r];
    CHECK(test.features().row(static_cast<Index>(r)) == ds.features().row(i));
    CHECK(test.votes().row(static_cast<Index>(r)) == ds.votes().row(i));
    CHECK((*test.true_labels())(static_cast<Index>(r)) == (*ds.true_labels())(i));
  }
}

TEST_CASE("standardize uses the sample standard deviation") {
  Matrix x(3, 1);
  x << 1, 2, 3;
  VoteMatrix v(3, 1);
  v << 1, 0, 1;
  const auto [out, record] = standardize(Dataset(x, v));
  CHECK(out.features()(0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(out.features()(1, 0) == doctest::Approx(0.0));
  CHECK(out.features()(2, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(record.mean(0) == doctest::Approx(2.0));
  CHECK(record.scale(0) == doctest::Approx(1.0));

  const auto [again, record2] = standardize(out);
  CHECK((again.features() - out.features()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((record.invert(out.features()) - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(record.apply_row(x.row(2).transpose())(0) == doctest::Approx(1.0));

  Matrix constant(3, 1);
  constant << 4, 4, 4;
  CHECK_THROWS_AS(standardize(Dataset(constant, v)), ValidationError);
}

TEST_CASE("format_double round trips") {
  for (double value : {0.1, -1.0 / 3.0, 1e-300, 123456789.123456789}) {
    CHECK(std::stod(format_double(value)) == value);
  }
}
