// rf: random forest runner with serial, multicore, SPMD and hybrid engines.
//
//   rf run --mode {serial|mc|spmd|hybrid} --workers K --trees T --seed S
//          (--data PATH | --synth n,p,c) --test-frac F --out FILE
//   rf launch --ranks N -- rf run --mode spmd ...
//   rf bench --modes mc,spmd --counts 1,2,4,8,16 --reps 3 --trees 500 --data PATH --out bench.csv
//   rf spmd-demo
//
// Exit codes: 0 success, 1 usage error, 2 runtime error, 3 distributed protocol error.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "CLI11.hpp"
#include "rfspmd/comm.hpp"
#include "rfspmd/engine.hpp"
#include "rfspmd/error.hpp"

namespace fs = std::filesystem;
using namespace rfspmd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitProtocol = 3;

class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct CommonOptions {
  std::string mode = "serial";
  std::size_t workers = 1;
  std::size_t ranks = 1;
  std::size_t trees = 500;
  std::uint64_t seed = 1;
  std::string data;
  std::string synth;
  double test_frac = 0.2;
  std::optional<std::size_t> mtry;
  std::size_t min_node_size = 1;
  std::optional<std::size_t> max_depth;
  std::size_t timeout_ms = static_cast<std::size_t>(kDefaultCommTimeout.count());
};

void add_data_options(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--trees", o.trees, "Number of trees")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Master RNG seed");
  auto* data = cmd->add_option("--data", o.data, "Letter-recognition style CSV file");
  auto* synth = cmd->add_option("--synth", o.synth, "Synthetic data n,p,c");
  data->excludes(synth);
  cmd->add_option("--test-frac", o.test_frac, "Held-out fraction")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--mtry", o.mtry, "Features sampled per split (default floor(sqrt(p)))");
  cmd->add_option("--min-node-size", o.min_node_size, "Minimum node size")->check(CLI::PositiveNumber);
  cmd->add_option("--max-depth", o.max_depth, "Depth cap (default unlimited)");
  cmd->add_option("--timeout-ms", o.timeout_ms, "Collective/rendezvous timeout");
}

RunConfig to_config(const CommonOptions& o) {
  RunConfig cfg;
  try {
    cfg.mode = parse_mode(o.mode);
    if (!o.data.empty()) {
      cfg.data = fs::path(o.data);
    } else if (!o.synth.empty()) {
      cfg.data = parse_synth_spec(o.synth);
    } else {
      throw InvalidArgument("one of --data or --synth is required");
    }
    cfg.workers = o.workers;
    cfg.ranks = o.ranks;
    cfg.seed = o.seed;
    cfg.test_frac = o.test_frac;
    cfg.forest.n_trees = o.trees;
    cfg.forest.mtry = o.mtry;
    cfg.forest.min_node_size = o.min_node_size;
    cfg.forest.max_depth = o.max_depth;
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

fs::path self_exe() { return fs::read_symlink("/proc/self/exe"); }

// argv for `rf run` reproducing cfg.
std::vector<std::string> run_arguments(const RunConfig& cfg, std::size_t timeout_ms) {
  std::vector<std::string> args = {self_exe().string(), "run", "--mode", std::string(mode_name(cfg.mode)),
                                   "--workers", std::to_string(cfg.workers), "--ranks",
                                   std::to_string(cfg.ranks), "--trees", std::to_string(cfg.forest.n_trees),
                                   "--seed", std::to_string(cfg.seed), "--test-frac",
                                   shortest(cfg.test_frac), "--min-node-size",
                                   std::to_string(cfg.forest.min_node_size), "--timeout-ms",
                                   std::to_string(timeout_ms)};
  if (cfg.forest.mtry) args.insert(args.end(), {"--mtry", std::to_string(*cfg.forest.mtry)});
  if (cfg.forest.max_depth) args.insert(args.end(), {"--max-depth", std::to_string(*cfg.forest.max_depth)});
  if (const auto* path = std::get_if<fs::path>(&cfg.data)) {
    args.insert(args.end(), {"--data", fs::absolute(*path).string()});
  } else {
    const auto& s = std::get<SynthSpec>(cfg.data);
    args.insert(args.end(), {"--synth", std::to_string(s.n) + "," + std::to_string(s.p) + "," +
                                            std::to_string(s.n_classes)});
  }
  return args;
}

int aggregate_exit(const std::vector<int>& codes) {
  bool failed = false;
  for (int c : codes) {
    if (c == kExitProtocol) return kExitProtocol;
    failed = failed || c != 0;
  }
  if (!failed) return kExitOk;
  for (int c : codes) {
    if (c == kExitUsage || c == kExitRuntime) return c;
  }
  return kExitRuntime;
}

void write_predictions(const fs::path& path, const std::vector<ClassId>& predictions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (ClassId c : predictions) out << c << '\n';
}

void write_record_file(const fs::path& path, const BenchRecord& record) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_records(out, {record});
}

int cmd_run(const CommonOptions& o, const std::string& out_path, const std::string& pred_path) {
  const RunConfig cfg = to_config(o);
  const bool distributed = cfg.mode == Mode::kSpmd || cfg.mode == Mode::kHybrid;
  const bool launched = std::getenv(kEnvSize) != nullptr;

  if (distributed && !launched && cfg.ranks > 1) {
    // Not under a launcher: start the group ourselves.
    auto args = run_arguments(cfg, o.timeout_ms);
    if (!out_path.empty()) args.insert(args.end(), {"--out", fs::absolute(out_path).string()});
    if (!pred_path.empty()) args.insert(args.end(), {"--predictions", fs::absolute(pred_path).string()});
    LaunchOptions lo;
    lo.timeout = std::chrono::milliseconds(o.timeout_ms);
    return aggregate_exit(launch(cfg.ranks, args, lo));
  }

  Communicator comm = distributed ? Communicator::from_environment() : Communicator::self();
  RunConfig effective = cfg;
  if (distributed) effective.ranks = comm.size();
  const RunResult result = run(comm, effective);

  if (result.is_root) {
    if (!out_path.empty()) write_record_file(out_path, result.record);
    if (!pred_path.empty()) write_predictions(pred_path, result.predictions);
  }
  std::ostringstream line;
  line << "mode=" << mode_name(result.record.mode) << " workers=" << result.record.workers
       << " ranks=" << result.record.ranks << " trees=" << result.record.n_trees
       << " correct=" << result.correct << "/" << result.n_test
       << " accuracy=" << shortest(result.record.accuracy)
       << " train_s=" << shortest(result.record.train_time_s)
       << " predict_s=" << shortest(result.record.predict_time_s)
       << " total_s=" << shortest(result.record.total_time_s) << '\n';
  comm.root_print(line.str());
  comm.finalize();
  return kExitOk;
}

int cmd_launch(std::size_t ranks, std::size_t timeout_ms, std::vector<std::string> command) {
  if (command.empty()) throw UsageError("launch: no command given (use -- rf run ...)");
  if (command[0] == "rf") command[0] = self_exe().string();
  LaunchOptions lo;
  lo.timeout = std::chrono::milliseconds(timeout_ms);
  return aggregate_exit(launch(ranks, command, lo));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_bench(const CommonOptions& o, const std::string& modes_text, const std::string& counts_text,
              std::size_t reps, const std::string& out_path, const std::string& transport) {
  CommonOptions base_opts = o;
  base_opts.mode = "serial";
  const RunConfig base = to_config(base_opts);

  SweepOptions sweep;
  try {
    for (const auto& m : split_list(modes_text)) sweep.modes.push_back(parse_mode(m));
    for (const auto& c : split_list(counts_text)) {
      std::size_t v = 0;
      auto [end, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || end != c.data() + c.size() || v == 0) {
        throw InvalidArgument("bad count '" + c + "'");
      }
      sweep.counts.push_back(v);
    }
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (sweep.modes.empty() || sweep.counts.empty()) throw UsageError("bench: --modes and --counts required");
  sweep.repetitions = reps;

  if (transport == "process") {
    const std::size_t timeout_ms = o.timeout_ms;
    sweep.distributed = [timeout_ms](const RunConfig& cfg) {
      const fs::path tmp = fs::temp_directory_path() /
                           ("rf-bench-" + std::to_string(::getpid()) + ".csv");
      auto args = run_arguments(cfg, timeout_ms);
      args.insert(args.end(), {"--out", tmp.string()});
      LaunchOptions lo;
      lo.timeout = std::chrono::milliseconds(timeout_ms);
      lo.discard_stdout = true;
      const int code = aggregate_exit(launch(cfg.ranks, args, lo));
      if (code == kExitProtocol) throw ProtocolError("bench cell failed with a protocol error");
      if (code != 0) throw Error("bench cell failed with exit code " + std::to_string(code));
      std::ifstream in(tmp);
      auto records = read_records(in);
      fs::remove(tmp);
      if (records.size() != 1) throw Error("bench cell wrote no record");
      RunResult r;
      r.record = records[0];
      return r;
    };
  } else if (transport != "inprocess") {
    throw UsageError("bench: --transport must be process or inprocess");
  }

  std::ofstream file;
  std::ostream* csv = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::trunc);
    if (!file) throw Error("cannot write " + out_path);
    csv = &file;
  }
  sweep.csv = csv;
  sweep.progress = out_path.empty() ? &std::cerr : &std::cout;
  const auto records = bench_sweep(base, sweep);

  std::ostream& report = out_path.empty() ? std::cerr : std::cout;
  report << "\nmedians per cell\nmode,count,reps,train_s,predict_s,total_s,accuracy\n";
  for (const auto& s : summarize(records)) {
    report << mode_name(s.mode) << ',' << s.count << ',' << s.repetitions << ','
           << shortest(s.median_train_s) << ',' << shortest(s.median_predict_s) << ','
           << shortest(s.median_total_s) << ',' << shortest(s.accuracy) << '\n';
  }
  return kExitOk;
}

// Smallest SPMD program: every rank contributes its rank id; rank 0 prints
// the gathered list and the reduced sum.
int cmd_spmd_demo() {
  Communicator comm = Communicator::from_environment();
  const auto ids = comm.allgather(Bytes{static_cast<std::uint8_t>(comm.rank())});
  const std::int64_t mine[] = {static_cast<std::int64_t>(comm.rank())};
  const auto sum = comm.reduce_sum(std::span<const std::int64_t>(mine));
  comm.barrier();
  std::ostringstream line;
  line << "size=" << comm.size() << " ranks=";
  for (std::size_t i = 0; i < ids.size(); ++i) line << (i ? "," : "") << int(ids[i].at(0));
  if (sum) line << " rank_sum=" << (*sum)[0];
  line << '\n';
  comm.root_print(line.str());
  comm.finalize();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random forest with serial, multicore, SPMD and hybrid engines"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  std::string run_out, run_pred;
  auto* run_cmd = app.add_subcommand("run", "Train and evaluate one configuration");
  run_cmd->add_option("--mode", run_opts.mode, "serial|mc|spmd|hybrid");
  run_cmd->add_option("--workers", run_opts.workers, "Threads per process")->check(CLI::PositiveNumber);
  run_cmd->add_option("--ranks", run_opts.ranks, "Processes (spmd/hybrid)")->check(CLI::PositiveNumber);
  add_data_options(run_cmd, run_opts);
  run_cmd->add_option("--out", run_out, "Write the result record as CSV");
  run_cmd->add_option("--predictions", run_pred, "Write test-row predictions, one class index per line");

  std::size_t launch_ranks = 1;
  std::size_t launch_timeout = static_cast<std::size_t>(kDefaultCommTimeout.count());
  std::vector<std::string> launch_command;
  auto* launch_cmd = app.add_subcommand("launch", "Start N ranks of a program (mpirun analog)");
  launch_cmd->add_option("--ranks,-n", launch_ranks, "Number of ranks")->required()->check(CLI::PositiveNumber);
  launch_cmd->add_option("--timeout-ms", launch_timeout, "Rendezvous/collective timeout");
  launch_cmd->add_option("command", launch_command, "Program and arguments (after --)")->required();

  CommonOptions bench_opts;
  std::string bench_modes = "mc,spmd", bench_counts = "1,2,4,8,16", bench_out;
  std::string bench_transport = "process";
  std::size_t bench_reps = 3;
  auto* bench_cmd = app.add_subcommand("bench", "Sweep modes x worker counts and emit CSV");
  bench_cmd->add_option("--modes", bench_modes, "Comma list of modes");
  bench_cmd->add_option("--counts", bench_counts, "Comma list of worker/rank counts");
  bench_cmd->add_option("--reps", bench_reps, "Repetitions per cell")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--workers", bench_opts.workers, "Threads per rank for hybrid cells")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--transport", bench_transport, "Distributed cells: process|inprocess");
  add_data_options(bench_cmd, bench_opts);
  bench_cmd->add_option("--out", bench_out, "CSV output file (default stdout)");

  auto* demo_cmd = app.add_subcommand("spmd-demo", "Print the gathered rank list from rank 0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run_opts, run_out, run_pred);
    if (*launch_cmd) return cmd_launch(launch_ranks, launch_timeout, launch_command);
    if (*bench_cmd) return cmd_bench(bench_opts, bench_modes, bench_counts, bench_reps, bench_out, bench_transport);
    if (*demo_cmd) return cmd_spmd_demo();
  } catch (const UsageError& e) {
    std::cerr << "rf: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProtocolError& e) {
    std::cerr << "rf: protocol error: " << e.what() << '\n';
    return kExitProtocol;
  } catch (const std::exception& e) {
    std::cerr << "rf: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
