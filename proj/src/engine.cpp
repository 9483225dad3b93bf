#include "rfspmd/engine.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "rfspmd/error.hpp"

namespace rfspmd {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

std::vector<std::uint64_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::uint64_t> out(end - begin);
  std::iota(out.begin(), out.end(), std::uint64_t{begin});
  return out;
}

// One thread per non-empty chunk; a single chunk runs on the caller.
void for_each_chunk(const ChunkPlan& plan, const std::function<void(std::size_t, IndexRange)>& fn) {
  std::vector<std::size_t> busy;
  for (std::size_t w = 0; w < plan.k; ++w) {
    if (plan.sizes[w] > 0) busy.push_back(w);
  }
  auto range = [&](std::size_t w) {
    return IndexRange{plan.offsets[w], plan.offsets[w] + plan.sizes[w]};
  };
  if (busy.size() <= 1) {
    for (std::size_t w : busy) fn(w, range(w));
    return;
  }
  std::vector<std::exception_ptr> errors(plan.k);
  {
    std::vector<std::jthread> threads;
    threads.reserve(busy.size());
    for (std::size_t w : busy) {
      threads.emplace_back([&, w] {
        try {
          fn(w, range(w));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Prepared {
  Dataset data;
  TrainTestSplit split;
  std::vector<ClassId> truth;  // labels of split.test_indices
};

Prepared prepare(const RunConfig& cfg) {
  Dataset ds = load_source(cfg.data, cfg.seed);
  TrainTestSplit split =
      train_test_split(ds, cfg.test_frac, make_stream(cfg.seed, {StreamPurpose::kSplit, 0}));
  std::vector<ClassId> truth;
  truth.reserve(split.test_indices.size());
  for (std::size_t r : split.test_indices) truth.push_back(ds.labels()[r]);
  return {std::move(ds), std::move(split), std::move(truth)};
}

// Trees [range) built by `workers` threads, one contiguous chunk each.
Forest build_trees_parallel(const TrainingSet& train, const ForestParams& params,
                            std::uint64_t seed, IndexRange range, std::size_t workers,
                            std::vector<std::size_t>& worker_counts) {
  const ChunkPlan plan = chunk_sizes(range.size(), workers);
  worker_counts = plan.sizes;
  std::vector<std::optional<Forest>> blocks(workers);
  for_each_chunk(plan, [&](std::size_t w, IndexRange chunk) {
    const auto indices = index_range(range.begin + chunk.begin, range.begin + chunk.end);
    blocks[w] = build_forest_block(train, params, indices, seed);
  });
  std::vector<Forest> present;
  for (auto& b : blocks) {
    if (b) present.push_back(std::move(*b));
  }
  if (present.empty()) return Forest(train.n_classes(), train.n_features(), params);
  return combine(present);
}

// Predicts test rows [range) with `workers` threads; each thread fills its
// own slice of the output.
std::vector<ClassId> predict_parallel(const Forest& forest, const Prepared& prep, IndexRange range,
                                      std::size_t workers) {
  std::vector<ClassId> out(range.size());
  const ChunkPlan plan = chunk_sizes(range.size(), workers);
  for_each_chunk(plan, [&](std::size_t, IndexRange chunk) {
    const std::span<const std::size_t> rows(prep.split.test_indices.data() + range.begin + chunk.begin,
                                            chunk.size());
    auto part = predict_forest(forest, prep.data, rows);
    std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(chunk.begin));
  });
  return out;
}

BenchRecord base_record(const RunConfig& cfg) {
  BenchRecord rec;
  rec.mode = cfg.mode;
  rec.workers = cfg.mode == Mode::kMulticore || cfg.mode == Mode::kHybrid ? cfg.workers : 1;
  rec.ranks = cfg.mode == Mode::kSpmd || cfg.mode == Mode::kHybrid ? cfg.ranks : 1;
  rec.n_trees = cfg.forest.n_trees;
  rec.seed = cfg.seed;
  return rec;
}

RunResult run_shared_memory(const RunConfig& cfg, std::size_t workers) {
  cfg.validate();
  RunResult result;
  result.record = base_record(cfg);
  const auto t0 = Clock::now();
  Prepared prep = prepare(cfg);
  if (prep.split.test_indices.empty()) throw InvalidArgument("run: test set is empty");

  const auto t1 = Clock::now();
  const TrainingSet train(prep.data, prep.split.train_indices);
  const Forest forest = build_trees_parallel(train, cfg.forest, cfg.seed,
                                             {0, cfg.forest.n_trees}, workers,
                                             result.worker_tree_counts);
  const auto t2 = Clock::now();
  result.predictions =
      predict_parallel(forest, prep, {0, prep.split.test_indices.size()}, workers);
  result.correct = count_correct(result.predictions, prep.truth);
  result.n_test = prep.truth.size();
  const auto t3 = Clock::now();

  result.rank_tree_counts = {cfg.forest.n_trees};
  result.rank_test_counts = {result.n_test};
  result.record.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.n_test);
  result.record.train_time_s = seconds_between(t1, t2);
  result.record.predict_time_s = seconds_between(t2, t3);
  result.record.total_time_s = seconds_between(t0, t3);
  return result;
}

Bytes encode_labels(std::span<const ClassId> labels) {
  Bytes out;
  out.reserve(labels.size() * 4);
  for (ClassId c : labels) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(c >> (8 * i)));
  }
  return out;
}

std::vector<ClassId> decode_labels(std::span<const std::uint8_t> in) {
  if (in.size() % 4 != 0) throw ProtocolError("prediction block has a partial label");
  std::vector<ClassId> out(in.size() / 4);
  for (std::size_t k = 0; k < out.size(); ++k) {
    ClassId c = 0;
    for (int i = 0; i < 4; ++i) c |= ClassId{in[4 * k + i]} << (8 * i);
    out[k] = c;
  }
  return out;
}

Bytes encode_u64(std::uint64_t v) {
  Bytes out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return out;
}

RunResult run_distributed(Communicator& comm, const RunConfig& cfg, std::size_t workers) {
  cfg.validate();
  RunResult result;
  result.record = base_record(cfg);
  result.record.ranks = comm.size();
  result.is_root = comm.is_root();

  // Divergent configs are a classic SPMD bug: compare digests up front.
  const auto digests = comm.allgather(encode_u64(config_digest(cfg)));
  for (std::size_t r = 1; r < digests.size(); ++r) {
    if (digests[r] != digests[0]) {
      throw ProtocolError("config mismatch: rank " + std::to_string(r) +
                          " runs a different configuration than rank 0");
    }
  }

  comm.barrier();
  const auto t0 = Clock::now();
  // Every rank loads the full data and draws the same split.
  Prepared prep = prepare(cfg);
  if (prep.split.test_indices.empty()) throw InvalidArgument("run: test set is empty");

  comm.barrier();
  const auto t1 = Clock::now();
  const TrainingSet train(prep.data, prep.split.train_indices);
  const IndexRange my_trees = block_indices(cfg.forest.n_trees, comm.size(), comm.rank());
  const Forest mine = build_trees_parallel(train, cfg.forest, cfg.seed, my_trees, workers,
                                           result.worker_tree_counts);

  const auto blocks_raw = comm.allgather(serialize_forest(mine));
  std::vector<Forest> blocks;
  blocks.reserve(blocks_raw.size());
  for (const auto& raw : blocks_raw) {
    blocks.push_back(deserialize_forest(raw, cfg.forest));
    result.rank_tree_counts.push_back(blocks.back().size());
  }
  const Forest forest = combine(blocks);
  if (forest.size() != cfg.forest.n_trees) {
    throw ProtocolError("combined forest has " + std::to_string(forest.size()) + " trees, expected " +
                        std::to_string(cfg.forest.n_trees));
  }

  comm.barrier();
  const auto t2 = Clock::now();
  const std::size_t n_test = prep.split.test_indices.size();
  const IndexRange my_rows = block_indices(n_test, comm.size(), comm.rank());
  const auto local = predict_parallel(forest, prep, my_rows, workers);
  const std::span<const ClassId> local_truth(prep.truth.data() + my_rows.begin, my_rows.size());
  const std::int64_t local_correct = static_cast<std::int64_t>(count_correct(local, local_truth));
  const std::int64_t counts[] = {local_correct};
  const auto total_correct = comm.reduce_sum(std::span<const std::int64_t>(counts));
  const auto gathered = comm.allgather(encode_labels(local));
  comm.barrier();
  const auto t3 = Clock::now();

  for (const auto& part : gathered) {
    auto labels = decode_labels(part);
    result.rank_test_counts.push_back(labels.size());
    result.predictions.insert(result.predictions.end(), labels.begin(), labels.end());
  }
  result.n_test = n_test;
  if (total_correct) {
    result.correct = static_cast<std::size_t>((*total_correct)[0]);
    result.record.accuracy = static_cast<double>(result.correct) / static_cast<double>(n_test);
  }
  result.record.train_time_s = seconds_between(t1, t2);
  result.record.predict_time_s = seconds_between(t2, t3);
  result.record.total_time_s = seconds_between(t0, t3);
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kSerial: return "serial";
    case Mode::kMulticore: return "mc";
    case Mode::kSpmd: return "spmd";
    case Mode::kHybrid: return "hybrid";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  if (text == "serial") return Mode::kSerial;
  if (text == "mc") return Mode::kMulticore;
  if (text == "spmd") return Mode::kSpmd;
  if (text == "hybrid") return Mode::kHybrid;
  throw InvalidArgument("unknown mode '" + std::string(text) + "' (serial|mc|spmd|hybrid)");
}

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec spec;
  std::size_t* fields[] = {&spec.n, &spec.p, &spec.n_classes};
  std::size_t at = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t comma = i < 2 ? text.find(',', at) : text.size();
    if (comma == std::string_view::npos) throw InvalidArgument("synth spec must be n,p,c");
    const std::string_view part = text.substr(at, comma - at);
    auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), *fields[i]);
    if (ec != std::errc() || end != part.data() + part.size() || part.empty()) {
      throw InvalidArgument("synth spec must be n,p,c; bad field '" + std::string(part) + "'");
    }
    at = comma + 1;
  }
  return spec;
}

void RunConfig::validate() const {
  if (workers < 1) throw InvalidArgument("workers must be >= 1");
  if (ranks < 1) throw InvalidArgument("ranks must be >= 1");
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw InvalidArgument("test_frac must be in (0, 1)");
  if (forest.n_trees < 1) throw InvalidArgument("trees must be >= 1");
}

std::uint64_t config_digest(const RunConfig& cfg) {
  std::ostringstream os;
  os << "seed=" << cfg.seed << ";workers=" << cfg.workers << ";trees=" << cfg.forest.n_trees
     << ";mtry=" << (cfg.forest.mtry ? std::to_string(*cfg.forest.mtry) : "-")
     << ";min_node=" << cfg.forest.min_node_size
     << ";depth=" << (cfg.forest.max_depth ? std::to_string(*cfg.forest.max_depth) : "-")
     << ";bag=" << (cfg.forest.bootstrap_size ? std::to_string(*cfg.forest.bootstrap_size) : "-");
  std::uint64_t frac_bits;
  std::memcpy(&frac_bits, &cfg.test_frac, sizeof frac_bits);
  os << ";test_frac=" << frac_bits << ";mode=" << mode_name(cfg.mode);
  if (const auto* path = std::get_if<std::filesystem::path>(&cfg.data)) {
    os << ";data=" << path->string();
  } else {
    const auto& s = std::get<SynthSpec>(cfg.data);
    os << ";synth=" << s.n << "," << s.p << "," << s.n_classes;
  }
  // FNV-1a, 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Dataset load_source(const DataSource& source, std::uint64_t seed) {
  if (const auto* path = std::get_if<std::filesystem::path>(&source)) {
    return load_dataset(*path, LabeledCsvFormat{std::nullopt, 26});
  }
  const auto& s = std::get<SynthSpec>(source);
  return synth_dataset(s.n, s.p, s.n_classes, make_stream(seed, {StreamPurpose::kSynth, 0}));
}

RunResult run_serial(const RunConfig& cfg) {
  if (cfg.mode != Mode::kSerial) throw InvalidArgument("run_serial: mode must be serial");
  return run_shared_memory(cfg, 1);
}

RunResult run_multicore(const RunConfig& cfg) {
  if (cfg.mode != Mode::kMulticore) throw InvalidArgument("run_multicore: mode must be mc");
  return run_shared_memory(cfg, cfg.workers);
}

RunResult run_spmd(Communicator& comm, const RunConfig& cfg) {
  if (cfg.mode != Mode::kSpmd) throw InvalidArgument("run_spmd: mode must be spmd");
  return run_distributed(comm, cfg, 1);
}

RunResult run_hybrid(Communicator& comm, const RunConfig& cfg) {
  if (cfg.mode != Mode::kHybrid) throw InvalidArgument("run_hybrid: mode must be hybrid");
  return run_distributed(comm, cfg, cfg.workers);
}

RunResult run(Communicator& comm, const RunConfig& cfg) {
  switch (cfg.mode) {
    case Mode::kSerial: return run_serial(cfg);
    case Mode::kMulticore: return run_multicore(cfg);
    case Mode::kSpmd: return run_spmd(comm, cfg);
    case Mode::kHybrid: return run_hybrid(comm, cfg);
  }
  throw InvalidArgument("run: unknown mode");
}

RunResult run_distributed_in_process(const RunConfig& cfg) {
  std::optional<RunResult> root;
  std::mutex mu;
  run_group(cfg.ranks, TransportKind::kInProcess, [&](Communicator& comm) {
    RunResult r = run(comm, cfg);
    comm.finalize();
    if (r.is_root) {
      std::lock_guard lock(mu);
      root = std::move(r);
    }
  });
  if (!root) throw ProtocolError("distributed run produced no root result");
  return std::move(*root);
}

// ---------------------------------------------------------------------------
// CSV records

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed6(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  return std::string(buf, end);
}

template <typename T>
T parse_number(std::string_view field, const char* name) {
  T value{};
  auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || end != field.data() + field.size() || field.empty()) {
    throw InvalidArgument(std::string("bench CSV: bad ") + name + " '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::string format_record(const BenchRecord& r) {
  std::string out;
  out += mode_name(r.mode);
  out += "," + std::to_string(r.workers) + "," + std::to_string(r.ranks) + "," +
         std::to_string(r.n_trees) + "," + std::to_string(r.seed) + "," + fixed6(r.train_time_s) +
         "," + fixed6(r.predict_time_s) + "," + fixed6(r.total_time_s) + "," + shortest(r.accuracy);
  return out;
}

BenchRecord parse_record(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> f;
  std::size_t at = 0;
  for (;;) {
    const std::size_t comma = line.find(',', at);
    f.push_back(line.substr(at, comma == std::string_view::npos ? std::string_view::npos : comma - at));
    if (comma == std::string_view::npos) break;
    at = comma + 1;
  }
  if (f.size() != 9) throw InvalidArgument("bench CSV: expected 9 fields");
  BenchRecord r;
  r.mode = parse_mode(f[0]);
  r.workers = parse_number<std::size_t>(f[1], "workers");
  r.ranks = parse_number<std::size_t>(f[2], "ranks");
  r.n_trees = parse_number<std::size_t>(f[3], "trees");
  r.seed = parse_number<std::uint64_t>(f[4], "seed");
  r.train_time_s = parse_number<double>(f[5], "train_time_s");
  r.predict_time_s = parse_number<double>(f[6], "predict_time_s");
  r.total_time_s = parse_number<double>(f[7], "total_time_s");
  r.accuracy = parse_number<double>(f[8], "accuracy");
  return r;
}

void write_records(std::ostream& out, const std::vector<BenchRecord>& records, bool header) {
  if (header) out << kBenchCsvHeader << '\n';
  for (const auto& r : records) out << format_record(r) << '\n';
  out.flush();
}

std::vector<BenchRecord> read_records(std::istream& in) {
  std::vector<BenchRecord> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && line == kBenchCsvHeader) {
      first = false;
      continue;
    }
    first = false;
    out.push_back(parse_record(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2;
}

std::vector<BenchRecord> bench_sweep(const RunConfig& base, const SweepOptions& options) {
  if (options.modes.empty() || options.counts.empty()) {
    throw InvalidArgument("bench_sweep: modes and counts must be non-empty");
  }
  if (options.repetitions < 1) throw InvalidArgument("bench_sweep: repetitions must be >= 1");
  for (std::size_t c : options.counts) {
    if (c < 1) throw InvalidArgument("bench_sweep: counts must be >= 1");
  }

  std::vector<Mode> modes = options.modes;
  std::sort(modes.begin(), modes.end(),
            [](Mode a, Mode b) { return mode_name(a) < mode_name(b); });
  modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
  std::vector<std::size_t> counts = options.counts;
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());

  if (options.csv) *options.csv << kBenchCsvHeader << '\n' << std::flush;
  std::vector<BenchRecord> records;
  for (Mode mode : modes) {
    const std::vector<std::size_t> cell_counts =
        mode == Mode::kSerial ? std::vector<std::size_t>{1} : counts;
    for (std::size_t count : cell_counts) {
      for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
        RunConfig cfg = base;
        cfg.mode = mode;
        RunResult result;
        switch (mode) {
          case Mode::kSerial:
            result = run_serial(cfg);
            break;
          case Mode::kMulticore:
            cfg.workers = count;
            result = run_multicore(cfg);
            break;
          case Mode::kSpmd:
            cfg.workers = 1;
            cfg.ranks = count;
            result = options.distributed(cfg);
            break;
          case Mode::kHybrid:
            cfg.ranks = count;
            result = options.distributed(cfg);
            break;
        }
        records.push_back(result.record);
        if (options.csv) *options.csv << format_record(result.record) << '\n' << std::flush;
        if (options.progress) {
          *options.progress << mode_name(mode) << " count=" << count << " rep=" << rep + 1 << "/"
                            << options.repetitions << " total=" << fixed6(result.record.total_time_s)
                            << "s accuracy=" << shortest(result.record.accuracy) << '\n'
                            << std::flush;
        }
      }
    }
  }
  return records;
}

std::vector<CellSummary> summarize(const std::vector<BenchRecord>& records) {
  std::vector<CellSummary> out;
  auto count_of = [](const BenchRecord& r) {
    switch (r.mode) {
      case Mode::kMulticore: return r.workers;
      case Mode::kSpmd:
      case Mode::kHybrid: return r.ranks;
      case Mode::kSerial: break;
    }
    return std::size_t{1};
  };
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    std::vector<double> train, predict, total;
    while (j < records.size() && records[j].mode == records[i].mode &&
           count_of(records[j]) == count_of(records[i])) {
      train.push_back(records[j].train_time_s);
      predict.push_back(records[j].predict_time_s);
      total.push_back(records[j].total_time_s);
      ++j;
    }
    out.push_back({records[i].mode, count_of(records[i]), j - i, median(train), median(predict),
                   median(total), records[i].accuracy});
    i = j;
  }
  return out;
}

}  // namespace rfspmd
