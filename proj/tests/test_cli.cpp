#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "corrmlp/cvol.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "corrmlp_test_cli";

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const fs::path out = kWork / "stdout.txt";
  const std::string cmd = std::string(CORRMLP_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  return r;
}

std::string p(const fs::path& x) { return x.string(); }

}  // namespace

TEST_CASE("end-to-end: synth, train, evaluate, register") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const fs::path data = kWork / "data";

  Run s = cli("synth --out " + p(data) + " --pairs 2 --size 16,16,16 --seed 3");
  REQUIRE_MESSAGE(s.code == 0, s.out);
  CHECK(fs::exists(data / "index.json"));
  CHECK(fs::exists(data / "pair_001" / "psi_true.cvol"));
  CHECK(s.out.find("\"seed\":3") != std::string::npos);

  // same seed regenerates identical files
  const fs::path again = kWork / "again";
  REQUIRE(cli("--seed 3 synth --out " + p(again) + " --pairs 2 --size 16,16,16").code == 0);
  std::ifstream a(data / "pair_000" / "moving.cvol", std::ios::binary), b(again / "pair_000" / "moving.cvol", std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());

  const fs::path ckpt = kWork / "model.ckpt";
  Run t = cli("train --data " + p(data) + " --out " + p(ckpt) + " --iters 2 --val-every 1 --val-pairs 2 --seed 1");
  REQUIRE_MESSAGE(t.code == 0, t.out);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(p(ckpt) + ".log.jsonl"));

  const fs::path report = kWork / "report.json";
  Run e = cli("evaluate --ckpt " + p(ckpt) + " --data " + p(data) + " --report " + p(report));
  REQUIRE_MESSAGE(e.code == 0, e.out);
  std::ifstream rf(report);
  const nlohmann::json rep = nlohmann::json::parse(rf);
  CHECK(rep.at("pairs").size() == 2);
  CHECK(rep.at("summary").size() == 2);

  Run r = cli("register --ckpt " + p(ckpt) + " --moving " + p(data / "pair_000" / "moving.cvol") + " --fixed " +
              p(data / "pair_000" / "fixed.cvol") + " --out-field " + p(kWork / "f.cvol") + " --out-warped " +
              p(kWork / "w.cvol"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(corrmlp::read_field(kWork / "f.cvol").extents() == corrmlp::Extents{16, 16, 16});
  CHECK(corrmlp::read_volume(kWork / "w.cvol").extents() == corrmlp::Extents{16, 16, 16});
}

TEST_CASE("exit codes") {
  fs::create_directories(kWork);
  CHECK(cli("--help").code == 0);
  CHECK(cli("synth --bogus 1").code == 1);
  CHECK(cli("synth --out " + p(kWork / "bad") + " --size 12,16,16").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("train --data " + p(kWork / "nowhere") + " --out " + p(kWork / "x.ckpt")).code == 3);
  CHECK(cli("evaluate --ckpt " + p(kWork / "nothing.ckpt") + " --data " + p(kWork) + " --report " + p(kWork / "r.json")).code == 3);
  Run ok = cli("gradcheck --scope ops --seeds 1");
  CHECK_MESSAGE(ok.code == 0, ok.out);
  Run bad = cli("gradcheck --scope ops --seeds 1 --inject-fault");
  CHECK(bad.code == 2);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("json config file") {
  fs::create_directories(kWork);
  const fs::path cfg = kWork / "cfg.json";
  {
    std::ofstream f(cfg);
    f << R"({"seed": 5, "synth": {"pairs": 1, "size": [8, 8, 8]}})";
  }
  Run r = cli("--config " + p(cfg) + " synth --out " + p(kWork / "cfgdata"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("\"seed\":5") != std::string::npos);
  CHECK(corrmlp::read_volume(kWork / "cfgdata" / "pair_000" / "fixed.cvol").extents() == corrmlp::Extents{8, 8, 8});
  {
    std::ofstream f(cfg);
    f << R"({"synth": {"pairz": 1}})";
  }
  CHECK(cli("--config " + p(cfg) + " synth --out " + p(kWork / "cfgdata2")).code == 1);
}
