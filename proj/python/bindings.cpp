#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <mutex>

#include "rfspmd/comm.hpp"
#include "rfspmd/data.hpp"
#include "rfspmd/engine.hpp"
#include "rfspmd/error.hpp"
#include "rfspmd/forest.hpp"
#include "rfspmd/partition.hpp"
#include "rfspmd/rng.hpp"

namespace py = pybind11;
using namespace rfspmd;

namespace {

StreamPurpose purpose_from(const std::string& name) {
  if (name == "split") return StreamPurpose::kSplit;
  if (name == "tree") return StreamPurpose::kTree;
  if (name == "synth") return StreamPurpose::kSynth;
  if (name == "fuzz") return StreamPurpose::kFuzz;
  throw InvalidArgument("unknown stream purpose '" + name + "' (split|tree|synth|fuzz)");
}

RunConfig make_config(const std::string& mode, std::size_t workers, std::size_t ranks, std::size_t trees,
                      std::uint64_t seed, std::optional<std::filesystem::path> data,
                      std::optional<std::tuple<std::size_t, std::size_t, std::size_t>> synth,
                      double test_frac, std::optional<std::size_t> mtry, std::size_t min_node_size,
                      std::optional<std::size_t> max_depth) {
  RunConfig cfg;
  cfg.mode = parse_mode(mode);
  cfg.workers = workers;
  cfg.ranks = ranks;
  cfg.seed = seed;
  if (data && synth) throw InvalidArgument("give either data or synth, not both");
  if (data) {
    cfg.data = *data;
  } else if (synth) {
    cfg.data = SynthSpec{std::get<0>(*synth), std::get<1>(*synth), std::get<2>(*synth)};
  }
  cfg.test_frac = test_frac;
  cfg.forest.n_trees = trees;
  cfg.forest.mtry = mtry;
  cfg.forest.min_node_size = min_node_size;
  cfg.forest.max_depth = max_depth;
  cfg.validate();
  return cfg;
}

// Distributed modes run as threads over the in-process transport.
RunResult run_any(const RunConfig& cfg) {
  if (cfg.mode == Mode::kSerial) return run_serial(cfg);
  if (cfg.mode == Mode::kMulticore) return run_multicore(cfg);
  return run_distributed_in_process(cfg);
}

py::dict result_dict(const RunResult& r) {
  py::dict d;
  d["mode"] = std::string(mode_name(r.record.mode));
  d["workers"] = r.record.workers;
  d["ranks"] = r.record.ranks;
  d["trees"] = r.record.n_trees;
  d["seed"] = r.record.seed;
  d["accuracy"] = r.record.accuracy;
  d["correct"] = r.correct;
  d["n_test"] = r.n_test;
  d["train_time_s"] = r.record.train_time_s;
  d["predict_time_s"] = r.record.predict_time_s;
  d["total_time_s"] = r.record.total_time_s;
  d["predictions"] = r.predictions;
  d["rank_tree_counts"] = r.rank_tree_counts;
  d["worker_tree_counts"] = r.worker_tree_counts;
  d["rank_test_counts"] = r.rank_test_counts;
  return d;
}

}  // namespace

PYBIND11_MODULE(_rfspmd, m) {
  m.doc() = "Random forest engines and SPMD collectives";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ProtocolError>(m, "ProtocolError", error.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", error.ptr());
  // Both an rfspmd.Error and a ValueError.
  static py::handle invalid = PyErr_NewException(
      "rfspmd._rfspmd.InvalidArgument", py::make_tuple(error, py::handle(PyExc_ValueError)).release().ptr(),
      nullptr);
  m.attr("InvalidArgument") = invalid;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      PyErr_SetString(invalid.ptr(), e.what());
    }
  });

  py::class_<RngStream>(m, "RngStream")
      .def(py::init([](std::uint64_t seed, const std::string& purpose, std::uint64_t index,
                       std::uint64_t counter) {
             return RngStream(seed, {purpose_from(purpose), index}, counter);
           }),
           py::arg("seed"), py::arg("purpose"), py::arg("index") = 0, py::arg("counter") = 0)
      .def("next_u64", &RngStream::next_u64)
      .def("uniform", &RngStream::uniform)
      .def("rand_below", &RngStream::rand_below, py::arg("m"))
      .def_property_readonly("counter", &RngStream::counter);

  m.def(
      "chunk_sizes", [](std::size_t total, std::size_t k) { return chunk_sizes(total, k).sizes; },
      py::arg("total"), py::arg("k"), "Near-equal sizes, remainder to the first chunks.");
  m.def(
      "block_indices",
      [](std::size_t n, std::size_t size, std::size_t rank) {
        const IndexRange r = block_indices(n, size, rank);
        return py::make_tuple(r.begin, r.end);
      },
      py::arg("n"), py::arg("size"), py::arg("rank"), "Half-open [begin, end) block of `rank`.");

  m.def(
      "train_test_split",
      [](std::size_t n_rows, double test_frac, std::uint64_t seed) {
        auto s = train_test_split(n_rows, test_frac, make_stream(seed, {StreamPurpose::kSplit, 0}));
        return py::make_tuple(s.train_indices, s.test_indices);
      },
      py::arg("n_rows"), py::arg("test_frac"), py::arg("seed"));

  m.def(
      "synth_dataset",
      [](std::size_t n, std::size_t p, std::size_t c, std::uint64_t seed) {
        const Dataset ds = synth_dataset(n, p, c, make_stream(seed, {StreamPurpose::kSynth, 0}));
        std::vector<std::vector<double>> rows;
        rows.reserve(ds.n_rows());
        for (std::size_t i = 0; i < ds.n_rows(); ++i) {
          const auto r = ds.row(i);
          rows.emplace_back(r.begin(), r.end());
        }
        return py::make_tuple(rows, ds.labels());
      },
      py::arg("n"), py::arg("p"), py::arg("n_classes"), py::arg("seed"),
      "Synthetic integer-valued data as (rows, labels).");

  m.def("gini_impurity", [](const std::vector<std::uint32_t>& counts) { return gini_impurity(counts); },
        py::arg("counts"));

  m.def(
      "run",
      [](const std::string& mode, std::size_t workers, std::size_t ranks, std::size_t trees,
         std::uint64_t seed, std::optional<std::filesystem::path> data,
         std::optional<std::tuple<std::size_t, std::size_t, std::size_t>> synth, double test_frac,
         std::optional<std::size_t> mtry, std::size_t min_node_size, std::optional<std::size_t> max_depth) {
        const RunConfig cfg =
            make_config(mode, workers, ranks, trees, seed, data, synth, test_frac, mtry, min_node_size, max_depth);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_any(cfg);
        }
        return result_dict(r);
      },
      py::arg("mode") = "serial", py::arg("workers") = 1, py::arg("ranks") = 1, py::arg("trees") = 500,
      py::arg("seed") = 1, py::arg("data") = py::none(), py::arg("synth") = py::none(),
      py::arg("test_frac") = 0.2, py::arg("mtry") = py::none(), py::arg("min_node_size") = 1,
      py::arg("max_depth") = py::none(),
      "Train and evaluate one configuration. spmd/hybrid ranks run as threads in this process.");

  py::class_<BenchRecord>(m, "BenchRecord")
      .def_property_readonly("mode", [](const BenchRecord& r) { return std::string(mode_name(r.mode)); })
      .def_readonly("workers", &BenchRecord::workers)
      .def_readonly("ranks", &BenchRecord::ranks)
      .def_readonly("trees", &BenchRecord::n_trees)
      .def_readonly("seed", &BenchRecord::seed)
      .def_readonly("train_time_s", &BenchRecord::train_time_s)
      .def_readonly("predict_time_s", &BenchRecord::predict_time_s)
      .def_readonly("total_time_s", &BenchRecord::total_time_s)
      .def_readonly("accuracy", &BenchRecord::accuracy)
      .def("csv", [](const BenchRecord& r) { return format_record(r); })
      .def("__repr__", [](const BenchRecord& r) { return "BenchRecord(" + format_record(r) + ")"; });

  m.def(
      "bench_sweep",
      [](const std::vector<std::string>& modes, const std::vector<std::size_t>& counts,
         std::size_t repetitions, std::size_t trees, std::uint64_t seed,
         std::optional<std::filesystem::path> data,
         std::optional<std::tuple<std::size_t, std::size_t, std::size_t>> synth, std::size_t workers) {
        const RunConfig base = make_config("serial", workers, 1, trees, seed, data, synth, 0.2,
                                           std::nullopt, 1, std::nullopt);
        SweepOptions opts;
        for (const auto& name : modes) opts.modes.push_back(parse_mode(name));
        opts.counts = counts;
        opts.repetitions = repetitions;
        py::gil_scoped_release release;
        return bench_sweep(base, opts);
      },
      py::arg("modes"), py::arg("counts"), py::arg("repetitions") = 1, py::arg("trees") = 500,
      py::arg("seed") = 1, py::arg("data") = py::none(), py::arg("synth") = py::none(),
      py::arg("workers") = 1, "Sweep (mode, count) cells; rows sorted by mode, count, repetition.");

  m.def(
      "collective_demo",
      [](std::size_t size, const std::string& transport) {
        if (transport != "inprocess" && transport != "socket") {
          throw InvalidArgument("transport must be inprocess or socket");
        }
        const auto kind = transport == "socket" ? TransportKind::kSocket : TransportKind::kInProcess;
        std::vector<std::size_t> gathered;
        std::int64_t sum = 0;
        std::mutex mu;
        {
          py::gil_scoped_release release;
          run_group(size, kind, [&](Communicator& comm) {
            const auto ids = comm.allgather(Bytes{static_cast<std::uint8_t>(comm.rank())});
            const std::int64_t mine[] = {static_cast<std::int64_t>(comm.rank())};
            const auto total = comm.reduce_sum(std::span<const std::int64_t>(mine));
            comm.finalize();
            if (total) {
              std::lock_guard lock(mu);
              for (const auto& b : ids) gathered.push_back(b.at(0));
              sum = (*total)[0];
            }
          });
        }
        return py::make_tuple(gathered, sum);
      },
      py::arg("size"), py::arg("transport") = "inprocess",
      "Allgather of rank ids plus a reduce_sum, as seen by rank 0.");
}
