// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "afa/afa.hpp"

namespace afa::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kTrainFile = "train.mtil";
constexpr const char* kTestFile = "test.mtil";
constexpr const char* kClassesFile = "classes.json";

json read_json_file(const fs::path& path) {
  const std::string text = detail::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<TaskData> read_task_dir(const fs::path& dir) {
  return split_by_task(read_dataset(dir / kTrainFile), read_dataset(dir / kTestFile));
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;

  std::size_t thread_count() const { return threads.value_or(threads_from_env()); }
};

int gen_data(const Globals& g, const std::string& spec_path, const fs::path& out_dir,
             std::ostream& out) {
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    try {
      spec = read_json_file(spec_path).get<SyntheticSpec>();
    } catch (const json::exception& e) {
      throw ContractError(std::string("synthetic spec: ") + e.what());
    }
  }
  if (g.seed) spec.seed = *g.seed;
  const SyntheticData data = generate_synthetic(spec);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  write_dataset(data.train, out_dir / kTrainFile);
  write_dataset(data.test, out_dir / kTestFile);
  detail::write_text(out_dir / kClassesFile, class_names_json(data.train).dump(2) + "\n");
  detail::write_text(out_dir / "spec.json", json(spec).dump(2) + "\n");
  out << json{{"train_records", data.train.samples.size()},
              {"test_records", data.test.samples.size()},
              {"min_mean_separation", data.min_mean_separation},
              {"required_separation", data.required_separation}}
             .dump()
      << "\n";
  return 0;
}

TrainConfig load_config(const Globals& g, const std::string& path) {
  TrainConfig cfg;
  if (!path.empty()) cfg = read_json_file(path).get<TrainConfig>();
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

std::vector<std::vector<Vector>> test_inputs(const std::vector<TaskData>& tasks) {
  std::vector<std::vector<Vector>> xs;
  for (const auto& t : tasks) xs.push_back(t.test_x);
  return xs;
}

int train(const Globals& g, const std::string& config_path, const fs::path& data_dir,
          const fs::path& out_dir, std::ostream& out) {
  const TrainConfig cfg = load_config(g, config_path);
  const std::vector<TaskData> tasks = read_task_dir(data_dir);
  StreamResult res = run_stream(cfg, tasks, g.thread_count());
  MetricsReport report = metrics(res.matrix);
  report.selection = task_selection_table(res.state, test_inputs(tasks), std::nullopt,
                                          g.thread_count());
  save_checkpoint(res.state, out_dir);
  detail::write_text(out_dir / "matrix.csv", matrix_to_csv(res.matrix));
  detail::write_text(out_dir / "log.jsonl", res.log.to_jsonl());
  detail::write_text(out_dir / "metrics.json", report.to_json().dump(2) + "\n");
  out << report.to_table();
  return 0;
}

int eval(const Globals& g, const fs::path& ckpt, const fs::path& data_dir, const fs::path& out_path,
         std::ostream& out) {
  const ModelState state = load_checkpoint(ckpt);
  const std::vector<TaskData> tasks = read_task_dir(data_dir);
  require(tasks.size() == state.task_count(),
          "eval: data has " + std::to_string(tasks.size()) + " tasks, checkpoint expects " +
              std::to_string(state.task_count()));
  json per_task = json::array();
  double sum = 0.0;
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    const double acc = evaluate_task(state, tasks[j].test_x, tasks[j].test_y, state.class_ids(j),
                                     g.thread_count());
    per_task.push_back({{"name", tasks[j].name}, {"accuracy", acc}});
    sum += acc;
  }
  const double last_mean = sum / static_cast<double>(tasks.size());
  json report = {{"trained_tasks", state.trained_tasks},
                 {"tasks", per_task},
                 {"last_mean", last_mean},
                 {"task_selection",
                  task_selection_table(state, test_inputs(tasks), std::nullopt, g.thread_count())
                      .to_json()}};
  if (fs::exists(ckpt / "matrix.csv")) {
    const AccuracyMatrix m = matrix_from_csv(detail::read_text(ckpt / "matrix.csv"));
    report["metrics"] = metrics(m).to_json();
  }
  detail::write_text(out_path, report.dump(2) + "\n");
  out << "last_mean " << format_double(last_mean) << "\n";
  return 0;
}

int report(const fs::path& matrix_path, const std::string& format, std::ostream& out) {
  const MetricsReport r = metrics(matrix_from_csv(detail::read_text(matrix_path)));
  if (format == "json") {
    out << r.to_json().dump(2) << "\n";
  } else if (format == "csv") {
    out << r.to_csv();
  } else {
    out << r.to_table();
  }
  return 0;
}

int route(const Globals& g, const fs::path& ckpt, const fs::path& data_path, std::ostream& out) {
  const ModelState state = load_checkpoint(ckpt);
  require(state.trained_tasks > 0, "route: checkpoint has no trained task");
  const EmbeddingDataset ds = read_dataset(data_path);
  require(ds.d_in == state.config.d_in, "route: data d_in " + std::to_string(ds.d_in) +
                                            " != model d_in " + std::to_string(state.config.d_in));
  std::vector<Selection> sel(ds.samples.size());
  parallel_for(ds.samples.size(), g.thread_count(), [&](std::size_t i) {
    sel[i] = select(state.bank, encode_image(state.encoder, ds.samples[i].x, EncoderPath::frozen()));
  });
  for (std::size_t i = 0; i < sel.size(); ++i) {
    json line = {{"index", i},
                 {"task_id", ds.samples[i].task_id},
                 {"label", ds.samples[i].label},
                 {"seen", sel[i].seen},
                 {"score", sel[i].score}};
    line["selected_task"] = sel[i].seen ? json(sel[i].task_id) : json(nullptr);
    out << line.dump() << "\n";
  }
  return 0;
}

int gradcheck_cmd(std::uint64_t seed, std::ostream& out) {
  GradcheckProblem p = GradcheckProblem::tiny(seed);
  const GradcheckReport r = gradcheck(p);
  json j = r.to_json();
  j["seed"] = seed;
  out << j.dump(2) << "\n";
  return r.pass() ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual multi-domain adapter learning experiments", "afa"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  std::size_t threads_value = 1;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding spec/config seeds");
  auto* threads_opt =
      app.add_option("--threads", threads_value, "Evaluation threads (default: AFA_THREADS or 1)")
          ->check(CLI::PositiveNumber);

  std::string spec_path, config_path, data, out_path, ckpt, matrix, format = "table";
  std::optional<std::uint64_t> grad_seed;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic multi-domain stream");
  gen->add_option("--spec", spec_path, "Synthetic spec JSON (default: the fixture spec)");
  gen->add_option("--out", out_path, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train on a task stream and write a checkpoint");
  tr->add_option("--config", config_path, "Training config JSON (default: built-in defaults)");
  tr->add_option("--data", data, "Data directory from gen-data")->required();
  tr->add_option("--out", out_path, "Checkpoint directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on every task's test set");
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Data directory")->required();
  ev->add_option("--out", out_path, "Report JSON path")->required();

  auto* rep = app.add_subcommand("report", "Transfer / Average / Last from an accuracy matrix CSV");
  rep->add_option("--matrix", matrix, "Accuracy matrix CSV")->required();
  rep->add_option("--format", format, "Output format")
      ->check(CLI::IsMember({"json", "csv", "table"}));

  auto* rt = app.add_subcommand("route", "Per-sample domain selections as JSON lines");
  rt->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  rt->add_option("--data", data, "Dataset file")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check on the tiny model");
  gc->add_option("--seed", grad_seed, "Model seed");

  auto* st = app.add_subcommand("selftest", "Run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (*seed_opt) g.seed = seed_value;
  if (*threads_opt) g.threads = threads_value;

  try {
    if (*gen) return gen_data(g, spec_path, out_path, out);
    if (*tr) return train(g, config_path, data, out_path, out);
    if (*ev) return eval(g, ckpt, data, out_path, out);
    if (*rep) return report(matrix, format, out);
    if (*rt) return route(g, ckpt, data, out);
    if (*gc) return gradcheck_cmd(grad_seed.value_or(g.seed.value_or(0)), out);
    if (*st) return selftest(out) ? 0 : 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace afa::cli
