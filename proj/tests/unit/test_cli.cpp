#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "../support/runs.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result sh(const std::string& args) {
  const std::string cmd = std::string(ORGANSIM_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

TEST_CASE("cli exit codes and a full ingest-simulate-report cycle") {
  const auto dir = runfix::temp_dir("cli");
  const auto data = " --data-dir " + dir + "/data ";
  CHECK(sh("--help").code == 0);
  CHECK(sh("").code == 1);
  CHECK(sh("frobnicate").code == 1);

  CHECK(sh("synth --patients 2 --seed 4 --out " + dir + "/c.ndjson").code == 0);
  auto r = sh(data + "--json ingest " + dir + "/c.ndjson");
  REQUIRE(r.code == 0);
  const auto ingested = nlohmann::json::parse(r.out);
  REQUIRE(ingested["accepted"].size() == 2);
  const auto pid = ingested["accepted"][0].get<std::string>();

  {
    std::ofstream bad(dir + "/bad.ndjson");
    bad << "{oops}\n";
  }
  CHECK(sh(data + "ingest " + dir + "/bad.ndjson").code == 1);
  CHECK(sh(data + "simulate --patient nobody").code == 1);
  CHECK(sh(data + "simulate --patient " + pid + " --mode sideways").code == 1);

  r = sh(data + "simulate --patient " + pid + " --horizon 4 --seed 2");
  REQUIRE(r.code == 0);
  const auto run_id = trim(r.out);
  CHECK_FALSE(run_id.empty());

  CHECK(sh(data + "counterfactual --run " + run_id + " --edit '{\"drug\":\"Aspirin\",\"remove\":true}'").code == 1);
  r = sh(data + "--json counterfactual --run " + run_id +
         " --edit '{\"drug\":\"Fluid resuscitation\",\"new_time_h\":2.0}'");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["parent_run_id"] == run_id);

  r = sh(data + "report --runs " + run_id);
  CHECK(r.code == 0);
  CHECK(r.out.rfind("section\tstratum\tkey\tfield\tvalue\n", 0) == 0);
  CHECK(sh(data + "report --runs missing").code == 1);

  {
    std::ofstream ok(dir + "/ok.txt");
    ok << "<simulation>\nRespiratory.pH: (7.35, 0.90)\n</simulation>\n";
    std::ofstream broken(dir + "/broken.txt");
    broken << "<simulation>\nRespiratory.pH 7.35\n";
  }
  CHECK(sh("grammar validate --expected Respiratory.pH " + dir + "/ok.txt").code == 0);
  CHECK(sh("grammar validate " + dir + "/broken.txt").code == 1);
}
