#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rfspmd/comm.hpp"
#include "rfspmd/data.hpp"
#include "rfspmd/forest.hpp"
#include "rfspmd/partition.hpp"

namespace rfspmd {

enum class Mode { kSerial, kMulticore, kSpmd, kHybrid };

std::string_view mode_name(Mode mode);  // serial | mc | spmd | hybrid
Mode parse_mode(std::string_view text);

struct SynthSpec {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t n_classes = 0;
  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

// Parses "n,p,c".
SynthSpec parse_synth_spec(std::string_view text);

using DataSource = std::variant<std::filesystem::path, SynthSpec>;

struct RunConfig {
  Mode mode = Mode::kSerial;
  std::size_t workers = 1;  // threads per process (mc, hybrid)
  std::size_t ranks = 1;    // processes (spmd, hybrid)
  std::uint64_t seed = 1;
  DataSource data = SynthSpec{500, 8, 4};
  double test_frac = 0.2;
  ForestParams forest;      // forest.n_trees defaults to 500

  void validate() const;
};

// Stable 64-bit digest of everything that must agree across SPMD ranks.
std::uint64_t config_digest(const RunConfig& cfg);

struct BenchRecord {
  Mode mode = Mode::kSerial;
  std::size_t workers = 1;
  std::size_t ranks = 1;
  std::size_t n_trees = 0;
  std::uint64_t seed = 0;
  double train_time_s = 0;
  double predict_time_s = 0;
  double total_time_s = 0;
  double accuracy = 0;
};

struct RunResult {
  BenchRecord record;
  bool is_root = true;                    // record and predictions valid here
  std::vector<ClassId> predictions;       // test rows in split order
  std::size_t correct = 0;
  std::size_t n_test = 0;
  std::vector<std::size_t> rank_tree_counts;    // trees built per rank
  std::vector<std::size_t> worker_tree_counts;  // trees built per worker in this process
  std::vector<std::size_t> rank_test_counts;    // test rows predicted per rank
};

// Loads or synthesizes the data described by cfg.data.
Dataset load_source(const DataSource& source, std::uint64_t seed);

RunResult run_serial(const RunConfig& cfg);
RunResult run_multicore(const RunConfig& cfg);
// Every rank calls with the same cfg; results are valid on rank 0.
// The caller owns finalize().
RunResult run_spmd(Communicator& comm, const RunConfig& cfg);
RunResult run_hybrid(Communicator& comm, const RunConfig& cfg);

// Dispatches on cfg.mode; spmd/hybrid use `comm`.
RunResult run(Communicator& comm, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Benchmark harness

inline constexpr std::string_view kBenchCsvHeader =
    "mode,workers,ranks,trees,seed,train_time_s,predict_time_s,total_time_s,accuracy";

std::string format_record(const BenchRecord& record);
BenchRecord parse_record(std::string_view line);
void write_records(std::ostream& out, const std::vector<BenchRecord>& records, bool header = true);
std::vector<BenchRecord> read_records(std::istream& in);

// Runs a distributed cell (mode spmd or hybrid, cfg.ranks set) and returns
// the root's result.
using DistributedRunner = std::function<RunResult(const RunConfig&)>;

// Runs the distributed cell as threads over the in-process transport.
RunResult run_distributed_in_process(const RunConfig& cfg);

struct SweepOptions {
  std::vector<Mode> modes;
  std::vector<std::size_t> counts;
  std::size_t repetitions = 1;
  DistributedRunner distributed = run_distributed_in_process;
  std::ostream* csv = nullptr;    // rows streamed here as they complete
  std::ostream* progress = nullptr;
};

// Cells in (mode name, count, repetition) order. The count is the worker
// count for mc, the rank count for spmd and hybrid (with base.workers
// threads per rank); serial runs one cell at count 1.
std::vector<BenchRecord> bench_sweep(const RunConfig& base, const SweepOptions& options);

struct CellSummary {
  Mode mode;
  std::size_t count;
  std::size_t repetitions;
  double median_train_s;
  double median_predict_s;
  double median_total_s;
  double accuracy;
};

std::vector<CellSummary> summarize(const std::vector<BenchRecord>& records);
double median(std::vector<double> values);

}  // namespace rfspmd
