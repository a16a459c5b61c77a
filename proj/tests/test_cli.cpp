#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

std::string bin() {
  const char* p = std::getenv("TALE_BIN");
  REQUIRE_MESSAGE(p != nullptr, "TALE_BIN must point at the CLI binary");
  return p;
}

std::string work_dir() {
  auto d = std::filesystem::temp_directory_path() / "tale_cli_tests";
  std::filesystem::create_directories(d);
  return d.string();
}

int run(const std::string& args) {
  std::string cmd = bin() + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("synth writes one line per sequence and is byte-deterministic") {
  auto dir = work_dir();
  auto out1 = dir + "/synth1.jsonl";
  auto out2 = dir + "/synth2.jsonl";
  CHECK(run("synth --kind const_poisson --rate 2 --T 50 --n-seq 100 --seed 1 --out " + out1) == 0);
  CHECK(line_count(out1) == 100);
  CHECK(run("synth --kind const_poisson --rate 2 --T 50 --n-seq 100 --seed 1 --out " + out2) == 0);
  CHECK(slurp(out1) == slurp(out2));
}

TEST_CASE("unknown flags exit with code 1 and --help exists everywhere") {
  CHECK(run("synth --bogus 1") == 1);
  CHECK(run("--help") == 0);
  for (const std::string& sub :
       {"synth", "rollup", "pretrain", "finetune", "eval", "gradcheck", "dump-weights"})
    CHECK(run(sub + " --help") == 0);
}

TEST_CASE("rollup rewrites codes in place") {
  auto dir = work_dir();
  auto data = dir + "/roll_in.jsonl";
  auto mapped = dir + "/roll_out.jsonl";
  auto map = dir + "/map.tsv";
  {
    std::ofstream d(data);
    d << R"({"patient_id":"a","demographics":[0.1,0.2],"events":[[0.0,"C1"],[3.0,"C2"]]})" << "\n";
    std::ofstream m(map);
    m << "C1\tC0\n";
  }
  CHECK(run("rollup --data " + data + " --map " + map + " --out " + mapped) == 0);
  auto text = slurp(mapped);
  CHECK(text.find("\"C0\"") != std::string::npos);
  CHECK(text.find("\"C1\"") == std::string::npos);
  CHECK(text.find("\"C2\"") != std::string::npos);
}

TEST_CASE("pretrain, eval, gradcheck, finetune, and dump-weights chain together") {
  auto dir = work_dir();
  auto data = dir + "/chain.jsonl";
  auto tasks = dir + "/chain_tasks.jsonl";
  auto ckpt = dir + "/chain.ckpt";
  auto ckpt_task = dir + "/chain_task.ckpt";
  auto curve = dir + "/chain_curve.csv";
  auto report = dir + "/chain_report.json";

  CHECK(run("synth --kind marker_task --n-seq 24 --n-codes 6 --marker-code 0 --window-days 30 "
            "--horizon-days 400 --seed 3 --out " + data + " --task-out " + tasks) == 0);
  CHECK(run("pretrain --data " + data + " --random-vocab 6:8:3 "
            "--set model.d=8 --set model.dz=4 --set loss.n_mc=4 --set train.pretrain_epochs=1 "
            "--set train.batch_size=8 --seed 5 --out " + ckpt) == 0);
  CHECK(run("eval --ckpt " + ckpt + " --data " + data + " --split test --split-seed 5 --report " +
            report) == 0);
  CHECK(slurp(report).find("acc_at_5") != std::string::npos);
  CHECK(run("gradcheck --ckpt " + ckpt + " --data " + data + " --seq-index 0 --eps 1e-3") == 0);
  CHECK(run("finetune --ckpt " + ckpt + " --task-data " + tasks +
            " --task marker --set train.finetune_epochs=1 --out " + ckpt_task) == 0);
  CHECK(run("eval --ckpt " + ckpt_task + " --task marker --task-data " + tasks + " --report " +
            report) == 0);
  CHECK(slurp(report).find("auroc") != std::string::npos);

  CHECK(run("dump-weights --ckpt " + ckpt + " --grid 0:730:1 --out " + curve) == 0);
  CHECK(line_count(curve) == 731);

  // byte-identical rerun of the curve dump
  auto curve2 = dir + "/chain_curve2.csv";
  CHECK(run("dump-weights --ckpt " + ckpt + " --grid 0:730:1 --out " + curve2) == 0);
  CHECK(slurp(curve) == slurp(curve2));
}

TEST_SUITE_END();
