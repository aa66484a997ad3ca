#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "oracle.hpp"
#include "spmc/data_prep.hpp"
#include "spmc/io.hpp"

using namespace spmc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run spmc_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "spmc_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string write(const std::string& path, const std::string& text) {
  write_file_atomic(path, text);
  return path;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) rows.push_back(split_csv_line(line));
  return rows;
}

double column(const std::vector<std::vector<std::string>>& rows, std::size_t r, const std::string& name) {
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    if (rows[0][c] == name) return std::stod(rows[r][c]);
  }
  throw std::runtime_error("no column " + name);
}

const std::string kFixtures = SPMC_FIXTURE_DIR;

}  // namespace

TEST_CASE("model file parsing") {
  std::istringstream ok("# binomial\nfamily = multinomial\nn = 3\np = 0.3, 0.7\nI = 2\nJ = 1\n");
  const cli::ModelFile m = cli::parse_model_file(ok);
  CHECK(m.a.dy() == 1);
  CHECK(dim(m.model) == 2);
  std::istringstream bad_key("family = multinomial\nn = 3\nprob = 0.5,0.5\n");
  CHECK_THROWS_AS(cli::parse_model_file(bad_key), DataError);
  std::istringstream bad_p("family = multinomial\nn = 3\np = 0.5,0.6\nI = 2\nJ = 1\n");
  CHECK_THROWS_AS(cli::parse_model_file(bad_p), DataError);
  std::istringstream bad_shape("family = bernoulli\nq = 0.5,0.5,0.5\nI = 2\nJ = 2\n");
  CHECK_THROWS_AS(cli::parse_model_file(bad_shape), DataError);
  std::istringstream dup("family = bernoulli\nq = 0.5\nq = 0.5\n");
  CHECK_THROWS_AS(cli::parse_model_file(dup), DataError);
}

TEST_CASE("estimate: identity-map Bernoulli and a replicated binomial") {
  const std::string dir = scratch("estimate");
  const std::string bern = write(dir + "/bern.txt", "family = bernoulli\nq = 0.5\nmargins = identity\n");
  Run r = spmc_run({"estimate", "--model-file", bern, "--y", "1"});
  REQUIRE(r.code == 0);
  CHECK(column(csv_rows(r.out), 1, "estimate") == doctest::Approx(0.5));

  // P(X_1 = 1) for X ~ M(3, (0.3, 0.7)): 3 * 0.3 * 0.7^2
  const std::string binom = write(dir + "/binom.txt", "family = multinomial\nn = 3\np = 0.3,0.7\nI = 2\nJ = 1\n");
  r = spmc_run({"estimate", "--model-file", binom, "--y", "1", "--n-is", "4", "--replications", "2000", "--no-tilt",
                "--proposal", "uniform", "--seed", "8"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  std::vector<double> v;
  for (std::size_t i = 1; i < rows.size(); ++i) v.push_back(column(rows, i, "estimate"));
  const auto ms = oracle::mean_se(v);
  const double exact = 3 * 0.3 * 0.7 * 0.7;
  CHECK(std::abs(ms.mean - exact) <= 4 * ms.se);
}

TEST_CASE("estimate: tilting at the mean needs no Newton step") {
  const std::string dir = scratch("estimate_mean");
  const std::string m = write(dir + "/m.txt", "family = multinomial\nn = 4\np = 0.25,0.25,0.25,0.25\nI = 2\nJ = 2\n");
  const Run r = spmc_run({"estimate", "--model-file", m, "--y", "2,2", "--tilt"});
  REQUIRE(r.code == 0);
  CHECK(column(csv_rows(r.out), 1, "newton_iters") == 0);
}

TEST_CASE("estimate: reproducibility, seeds and exit codes") {
  const std::string dir = scratch("estimate_codes");
  const std::string m = write(dir + "/m.txt", "family = multinomial\nn = 6\np = 0.1,0.2,0.3,0.4\nI = 2\nJ = 2\n");
  const std::vector<std::string> args = {"estimate", "--model-file", m, "--y", "2,3", "--replications", "5"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> a = args;
    a.insert(a.end(), extra.begin(), extra.end());
    return spmc_run(a);
  };
  const Run a = with({"--seed", "42"});
  const Run b = with({"--seed", "42"});
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(with({"--seed", "43"}).out != a.out);

  ::setenv("SPMC_SEED", "42", 1);
  CHECK(with({}).out == a.out);
  ::setenv("SPMC_SEED", "not-a-number", 1);
  CHECK(with({}).code == cli::kExitUsage);
  ::unsetenv("SPMC_SEED");
  CHECK(with({}).out == with({"--seed", "1"}).out);

  CHECK(spmc_run({"estimate", "--model-file", m, "--y", "7,2"}).code == cli::kExitData);   // infeasible
  CHECK(spmc_run({"estimate", "--model-file", m, "--y", "2"}).code == cli::kExitData);     // wrong length
  CHECK(spmc_run({"estimate", "--model-file", m}).code == cli::kExitUsage);                // missing --y
  CHECK(spmc_run({"estimate", "--model-file", dir + "/none.txt", "--y", "1,1"}).code == cli::kExitData);
  CHECK(spmc_run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(spmc_run({}).code == cli::kExitUsage);
  CHECK(spmc_run({"--help"}).code == 0);
}

TEST_CASE("outputs to files carry a metadata sidecar") {
  const std::string dir = scratch("meta");
  const Run r = spmc_run({"count-tables", "--rows", "1,1", "--cols", "1,1", "--n-is", "8", "--replications", "10",
                          "--seed", "5", "--threads", "2", "--out", dir + "/c.csv"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir + "/c.csv"));
  const std::string meta = read_file(dir + "/c.csv.meta.json");
  CHECK(meta.find("\"seed\": 5") != std::string::npos);
  CHECK(meta.find("\"subcommand\": \"count-tables\"") != std::string::npos);
  CHECK(meta.find("\"version\"") != std::string::npos);
  CHECK(meta.find("--threads") == std::string::npos);

  const std::string first = read_file(dir + "/c.csv");
  REQUIRE(spmc_run({"count-tables", "--rows", "1,1", "--cols", "1,1", "--n-is", "8", "--replications", "10", "--seed",
                    "5", "--out", dir + "/d.csv"})
              .code == 0);
  CHECK(read_file(dir + "/d.csv") == first);
  CHECK(read_file(dir + "/d.csv.meta.json").substr(0, 20) == meta.substr(0, 20));
}

TEST_CASE("count-tables against enumeration") {
  Run r = spmc_run({"count-tables", "--rows", "1", "--cols", "1"});
  REQUIRE(r.code == 0);
  CHECK(column(csv_rows(r.out), 1, "estimate") == 1.0);

  r = spmc_run({"count-tables", "--rows", "1,1", "--cols", "1,1", "--n-is", "32", "--replications", "400"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  CHECK(oracle::count_binary_tables({1, 1}, {1, 1}) == 2);
  CHECK(std::abs(column(rows, 1, "estimate") - 2.0) <= 3 * column(rows, 1, "se"));

  r = spmc_run({"count-tables", "--rows", "2,1", "--cols", "2,2"});
  REQUIRE(r.code == 0);
  CHECK(column(csv_rows(r.out), 1, "estimate") == 0.0);
  CHECK(column(csv_rows(r.out), 1, "feasible") == 0.0);
}

TEST_CASE("bench writes one CSV row per setting") {
  const Run r = spmc_run({"bench", "--study", "fig1", "--n-grid", "20,40", "--K", "2", "--n-is", "8",
                          "--replications", "6"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  CHECK(rows.size() == 1 + 8);
  CHECK(rows[0][0] == "setting");
  CHECK(spmc_run({"bench", "--study", "fig9"}).code == cli::kExitUsage);
  CHECK(spmc_run({"bench", "--study", "fig1", "--n-grid", "a,b"}).code == cli::kExitUsage);
}

TEST_CASE("synth: empty datasets and byte reproducibility") {
  const std::string dir = scratch("synth");
  REQUIRE(spmc_run({"synth", "--model", "1", "--K", "0", "--out", dir + "/empty.csv"}).code == 0);
  CHECK(read_file(dir + "/empty.csv") == "station_id,n,covariate,r_1,r_2,s_1,s_2\n");

  const std::vector<std::string> args = {"synth", "--model", "3", "--I", "3", "--J", "2", "--K", "7", "--n", "50",
                                         "--seed", "11"};
  auto out = [&](const std::string& name) {
    std::vector<std::string> a = args;
    a.push_back("--out");
    a.push_back(dir + "/" + name);
    REQUIRE(spmc_run(a).code == 0);
    return read_file(dir + "/" + name);
  };
  const std::string x = out("a.csv");
  CHECK(x == out("b.csv"));
  CHECK(read_file(dir + "/a.csv.truth.csv") == read_file(dir + "/b.csv.truth.csv"));
  const Dataset d = load_dataset(dir + "/a.csv");
  CHECK(d.stations.size() == 7);
  CHECK(spmc_run({"synth", "--model", "2", "--theta", "1,2,3", "--out", dir + "/bad.csv"}).code == cli::kExitUsage);
}

TEST_CASE("prep reproduces the cleaning rules on the fixture") {
  const std::string dir = scratch("prep");
  const Run r = spmc_run({"prep", "--round1", kFixtures + "/prep/round1.csv", "--round2", kFixtures + "/prep/round2.csv",
                          "--exclude", kFixtures + "/prep/exclude.txt", "--out", dir + "/data.csv"});
  REQUIRE(r.code == 0);
  CHECK(read_file(dir + "/data.csv") == read_file(kFixtures + "/prep/expected_dataset.csv"));
  CHECK(read_file(dir + "/data.csv.rejected.csv") == read_file(kFixtures + "/prep/expected_rejected.csv"));
  CHECK(read_file(dir + "/data.csv.options.csv") == read_file(kFixtures + "/prep/expected_options.csv"));
  CHECK(read_file(dir + "/data.csv.json") == read_file(kFixtures + "/prep/expected_sidecar.json"));

  const std::string bad = write(dir + "/bad.csv", "station_id,option,votes\n");
  CHECK(spmc_run({"prep", "--round1", bad, "--round2", bad, "--out", dir + "/x.csv"}).code == cli::kExitData);
}

TEST_CASE("fit: stage gating, reproducibility and model3 covariates") {
  const std::string dir = scratch("fit");
  REQUIRE(spmc_run({"synth", "--model", "2", "--K", "12", "--n", "40", "--theta", "0.5", "--seed", "3", "--out",
                    dir + "/d.csv"})
              .code == 0);
  const std::vector<std::string> sched = {"--phase1-iters", "20", "--phase2-iters", "30", "--late-start", "25",
                                          "--nis-early", "8", "--nis-late", "16", "--tail-average", "5",
                                          "--hessian-n-is", "16", "--n-is", "16", "--draws", "20", "--pmmh-steps", "20"};
  auto fit = [&](const std::string& out, const std::string& stage, const std::string& model, const std::string& data,
                 const std::string& threads) {
    std::vector<std::string> a = {"fit", "--data", data, "--model", model, "--stage", stage,
                                  "--out", out, "--seed", "9", "--threads", threads};
    a.insert(a.end(), sched.begin(), sched.end());
    return spmc_run(a);
  };
  REQUIRE(fit(dir + "/map", "map", "2", dir + "/d.csv", "1").code == 0);
  CHECK(fs::exists(dir + "/map/map.csv"));
  CHECK(fs::exists(dir + "/map/hessian.csv"));
  CHECK_FALSE(fs::exists(dir + "/map/is_draws.csv"));
  CHECK_FALSE(fs::exists(dir + "/map/pmmh_draws.csv"));

  REQUIRE(fit(dir + "/all1", "all", "2", dir + "/d.csv", "1").code == 0);
  REQUIRE(fit(dir + "/all2", "all", "2", dir + "/d.csv", "3").code == 0);
  for (const char* f : {"map.csv", "hessian.csv", "is_draws.csv", "is_summary.csv", "evidence.csv", "pmmh_draws.csv",
                        "pmmh_summary.csv", "pmmh_stats.csv"}) {
    INFO(f);
    CHECK(read_file(dir + "/all1/" + f) == read_file(dir + "/all2/" + f));
  }
  CHECK(read_file(dir + "/all1/map.csv") == read_file(dir + "/map/map.csv"));

  // model3 needs covariates
  write(dir + "/nocov.csv", "station_id,n,r_1,r_2,s_1,s_2\na-1-1,4,2,2,1,3\na-1-2,4,1,3,2,2\n");
  CHECK(fit(dir + "/m3", "map", "3", dir + "/nocov.csv", "1").code == cli::kExitData);
  CHECK(fit(dir + "/m9", "map", "9", dir + "/d.csv", "1").code == cli::kExitUsage);
}

TEST_CASE("compare: identical models give a Bayes factor near zero") {
  const std::string dir = scratch("compare");
  REQUIRE(spmc_run({"synth", "--model", "2", "--K", "15", "--n", "30", "--theta", "0.3", "--seed", "5", "--out",
                    dir + "/d.csv"})
              .code == 0);
  const Run r = spmc_run({"compare", "--data", dir + "/d.csv", "--models", "2,2", "--phase1-iters", "30",
                          "--phase2-iters", "40", "--late-start", "30", "--nis-early", "16", "--nis-late", "32",
                          "--tail-average", "10", "--hessian-n-is", "64", "--n-is", "64", "--draws", "400", "--seed",
                          "2"});
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[3][0] == "log10_bayes_factor");
  const double bf = std::stod(rows[3][2]);
  const double se = std::stod(rows[3][3]);
  INFO("log10 BF " << bf << " se " << se);
  CHECK(std::abs(bf) <= 3 * se + 1e-12);
  CHECK(spmc_run({"compare", "--data", dir + "/d.csv", "--models", "2"}).code == cli::kExitUsage);
}
