#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "biphoton/cli/commands.hpp"
#include "biphoton/grid_io.hpp"

using namespace biphoton;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "biphoton_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (root() / name).string(); }

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Runs the installed executable through the shell; returns its exit status.
int run_tool(const std::string& args) {
  const char* tool = std::getenv("BIPHOTON_TOOL");
  REQUIRE(tool != nullptr);
  const std::string cmd = std::string("'") + tool + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// key = value lines of a report, up to the first comment line.
std::map<std::string, std::string> report(const fs::path& path) {
  std::ifstream in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') break;
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Frame runs shared by several cases: a flat reference and an eq7 screen.
const std::string& reference_frames() {
  static const std::string path = [] {
    const auto r = run_cli({"simulate", "--frames", "150", "--seed", "4", "--preset", "none", "--out", at("ref")});
    REQUIRE(r.code == 0);
    return at("ref") + "/frames.pcbf";
  }();
  return path;
}

const std::string& eq7_frames() {
  static const std::string path = [] {
    const auto r = run_cli({"simulate", "--frames", "150", "--seed", "5", "--preset", "eq7", "--out", at("eq7")});
    REQUIRE(r.code == 0);
    return at("eq7") + "/frames.pcbf";
  }();
  return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  const auto r = run_cli({"simulate", "--frames", "0", "--out", at("zero")});
  CHECK(r.code == cli::kExitUsage);
  CHECK_FALSE(r.err.empty());
  CHECK(run_cli({"simulate", "--frames", "10", "--mode", "sideways", "--out", at("mode")}).code == cli::kExitUsage);
  CHECK(run_cli({"simulate", "--frames", "10"}).code == cli::kExitUsage);
  CHECK(run_tool("simulate --frames 0 --out '" + at("zero_tool") + "'") == 1);
  CHECK(run_tool("--help") == 0);
}

TEST_CASE("same seed, same bytes") {
  REQUIRE(run_cli({"simulate", "--frames", "12", "--seed", "9", "--preset", "saddle", "--out", at("a")}).code == 0);
  REQUIRE(run_cli({"simulate", "--frames", "12", "--seed", "9", "--preset", "saddle", "--threads", "2", "--out", at("b")})
              .code == 0);
  REQUIRE(run_cli({"simulate", "--frames", "12", "--seed", "10", "--preset", "saddle", "--out", at("c")}).code == 0);
  const auto fa = cli::sha256_file(at("a") + "/frames.pcbf");
  CHECK(fa == cli::sha256_file(at("b") + "/frames.pcbf"));
  CHECK(fa != cli::sha256_file(at("c") + "/frames.pcbf"));
  CHECK(fs::file_size(at("a") + "/frames.pcbf") == 32 + 3465 * 12);
  const auto m = cli::read_manifest(at("a") + "/manifest.txt");
  CHECK(m.command == "simulate");
  bool listed = false;
  for (const auto& [name, digest] : m.outputs)
    if (name == "frames.pcbf") listed = digest == fa;
  CHECK(listed);
}

TEST_CASE("manifest records the screen coefficients exactly") {
  eq7_frames();
  const auto m = cli::read_manifest(at("eq7") + "/manifest.txt");
  CHECK(m.params.at("screen.alpha.2_0") == "8");
  CHECK(m.params.at("screen.alpha.1_1") == "6");
  CHECK(m.params.at("screen.alpha.0_2") == "-7");
  CHECK(m.params.at("screen.alpha.3_0") == "4");
  CHECK(m.params.at("screen.alpha.2_1") == "-5");
  CHECK(m.params.at("screen.alpha.1_2") == "-4");
  CHECK(m.params.at("screen.alpha.0_3") == "3");
  CHECK(m.params.count("screen.alpha.1_0") == 0);
  CHECK_FALSE(m.timestamp.empty());
}

TEST_CASE("reconstruct with and without a reference") {
  const auto r = run_cli({"reconstruct", eq7_frames(), "--out", at("rec_noref")});
  REQUIRE(r.code == 0);
  const auto kv = report(at("rec_noref") + "/report.txt");
  CHECK(kv.at("reference") == "none");
  CHECK(kv.at("frames") == "150");
  CHECK(kv.at("window_px") == "23");
  for (const char* f : {"centroid.pcbg", "centroid_clean.pcbg", "gradients.txt", "coeffs.txt", "phase.pcbg", "manifest.txt"})
    CHECK(fs::exists(at("rec_noref") + "/" + f));

  const auto r2 = run_cli({"reconstruct", eq7_frames(), "--reference", reference_frames(), "--no-tilt", "--out", at("rec_ref")});
  REQUIRE(r2.code == 0);
  const auto kv2 = report(at("rec_ref") + "/report.txt");
  CHECK(kv2.at("reference") == reference_frames());
  CHECK(kv2.at("tilt") == "dropped");
  CHECK(fs::exists(at("rec_ref") + "/reference_gradients.txt"));
  // Raster sidecar describes the grid.
  CHECK_FALSE(read_grid_meta(at("rec_ref") + "/phase.pcbg").empty());
}

TEST_CASE("corrupt inputs exit with code 2 and name the file") {
  const auto junk = at("junk.pcbf");
  {
    std::ofstream out(junk, std::ios::binary);
    out << "XXXXnot a frame file at all, padded to more than thirty-two bytes";
  }
  const auto r = run_cli({"reconstruct", junk, "--out", at("junk_out")});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("junk.pcbf") != std::string::npos);
  CHECK(r.err.find("offset 0") != std::string::npos);
  CHECK(run_tool("image '" + junk + "' --out '" + at("junk_tool") + "'") == 2);

  // Truncated frame data.
  const std::string frames = slurp(reference_frames());
  const auto cut = at("cut.pcbf");
  {
    std::ofstream out(cut, std::ios::binary);
    out << frames.substr(0, frames.size() - 100);
  }
  const auto r2 = run_cli({"accumulate", cut, "--out", at("cut_out")});
  CHECK(r2.code == cli::kExitData);
  CHECK(r2.err.find("cut.pcbf") != std::string::npos);
}

TEST_CASE("replay reproduces outputs") {
  REQUIRE(run_cli({"simulate", "--frames", "20", "--seed", "3", "--preset", "film(1.5, 600um, 2)", "--out", at("orig")}).code ==
          0);
  REQUIRE(run_cli({"replay", at("orig") + "/manifest.txt", "--out", at("again")}).code == 0);
  CHECK(cli::sha256_file(at("orig") + "/frames.pcbf") == cli::sha256_file(at("again") + "/frames.pcbf"));
  CHECK(slurp(at("orig") + "/screen_raster.pcbg") == slurp(at("again") + "/screen_raster.pcbg"));

  // Downstream command with inputs: digests are checked on replay.
  REQUIRE(run_cli({"accumulate", at("orig") + "/frames.pcbf", "--anticorr", "--out", at("acc")}).code == 0);
  REQUIRE(run_cli({"replay", at("acc") + "/manifest.txt", "--out", at("acc2")}).code == 0);
  CHECK(slurp(at("acc") + "/stats.pcbs") == slurp(at("acc2") + "/stats.pcbs"));
  {
    std::ofstream out(at("orig") + "/frames.pcbf", std::ios::binary | std::ios::app);
    out << "tampered";
  }
  CHECK(run_cli({"replay", at("acc") + "/manifest.txt", "--out", at("acc3")}).code == cli::kExitData);
}

TEST_CASE("config files feed the run and replay") {
  const auto cfg = at("small.cfg");
  {
    std::ofstream out(cfg);
    out << "pairs_per_frame = 3000\ndark_count_prob = 0.01\n";
  }
  REQUIRE(run_cli({"simulate", "--frames", "5", "--config", cfg, "--out", at("cfg_run")}).code == 0);
  const auto m = cli::read_manifest(at("cfg_run") + "/manifest.txt");
  CHECK(m.config.at("pairs_per_frame") == "3000");
  fs::remove(cfg);  // replay uses the snapshot
  REQUIRE(run_cli({"replay", at("cfg_run") + "/manifest.txt", "--out", at("cfg_again")}).code == 0);
  CHECK(slurp(at("cfg_run") + "/frames.pcbf") == slurp(at("cfg_again") + "/frames.pcbf"));
  {
    std::ofstream out(at("bad.cfg"));
    out << "pairs_per_frame = lots\n";
  }
  CHECK(run_cli({"simulate", "--frames", "5", "--config", at("bad.cfg"), "--out", at("bad_cfg")}).code != 0);
}

TEST_CASE("snr uses frame prefixes") {
  REQUIRE(run_cli({"simulate", "--frames", "60", "--seed", "8", "--out", at("snr60")}).code == 0);
  REQUIRE(run_cli({"simulate", "--frames", "40", "--seed", "8", "--out", at("snr40")}).code == 0);
  const auto a = run_cli({"snr", at("snr60") + "/frames.pcbf", "--n-list", "10,20,40,60", "--out", at("snr_a")});
  const auto b = run_cli({"snr", at("snr40") + "/frames.pcbf", "--n-list", "10,20,40", "--out", at("snr_b")});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  // The first 40 frames of both files are identical, so the shared rows agree.
  std::istringstream la(slurp(at("snr_a") + "/snr.csv")), lb(slurp(at("snr_b") + "/snr.csv"));
  std::string sa, sb;
  for (int i = 0; i < 4; ++i) {
    std::getline(la, sa);
    std::getline(lb, sb);
    CHECK(sa == sb);
  }

  const auto one = run_cli({"snr", at("snr40") + "/frames.pcbf", "--n-list", "40", "--out", at("snr_one")});
  CHECK(one.code == 0);
  CHECK(report(at("snr_one") + "/report.txt").at("fit").rfind("refused", 0) == 0);
  CHECK(run_cli({"snr", at("snr40") + "/frames.pcbf", "--n-list", "20,10,30", "--out", at("snr_bad")}).code ==
        cli::kExitUsage);
  CHECK(run_cli({"snr", at("snr40") + "/frames.pcbf", "--n-list", "10,80", "--out", at("snr_long")}).code != 0);
  CHECK_FALSE(fs::exists(at("snr_long")));
}

TEST_CASE("image modes") {
  REQUIRE(run_cli({"image", reference_frames(), "--mode", "direct", "--out", at("direct")}).code == 0);
  const auto g = read_grid(at("direct") + "/direct.pcbg");
  CHECK(g.width() == 165);
  double total = 0.0;
  for (double v : g.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    total += v;
  }
  CHECK(total > 0.0);

  const auto r = run_cli({"image", reference_frames(), "--mode", "cpd", "--out", at("cpd_missing")});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("--postselect") != std::string::npos);
  CHECK(run_cli({"image", reference_frames(), "--mode", "cpd", "--postselect", "82,82", "--out", at("cpd")}).code == 0);
  CHECK(run_cli({"image", reference_frames(), "--mode", "difference", "--out", at("diff")}).code == 0);
  CHECK(run_cli({"image", reference_frames(), "--mode", "centroid", "--compare", at("direct") + "/direct.pcbg", "--out",
                 at("cmp_bad")})
            .code == cli::kExitData);
}
