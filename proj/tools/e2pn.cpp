// Command-line entry point: group inspection, property checks, gather
// benchmark, synthetic data, training and evaluation.
//
// Every subcommand writes a JSON report under the output directory and
// prints an aligned text summary (or the JSON itself with --json).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "e2pn/bench.hpp"
#include "e2pn/checkpoint.hpp"
#include "e2pn/checks.hpp"
#include "e2pn/config.hpp"
#include "e2pn/error.hpp"
#include "e2pn/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace e2pn;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kConfig = 2, kNoCheckpoint = 3, kInternal = 4 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> trials;
  // Section that --trials sets: "bench" or "check".
  std::string trials_section = "check";
  std::string mode;
  std::vector<std::string> overrides;
  bool json_stdout = false;
  // synth
  std::vector<std::string> shapes;
  std::optional<std::size_t> points;
  // eval
  std::string checkpoint;
};

ExperimentConfig resolve(const Options& o) {
  auto c = o.config_path.empty() ? ExperimentConfig::defaults() : load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) apply_override(c, "seed", std::to_string(*o.seed));
  if (!o.out.empty()) c.out = o.out;
  if (o.trials) apply_override(c, o.trials_section + ".trials", std::to_string(*o.trials));
  if (!o.mode.empty()) {
    const auto mode = parse_gather_mode(o.mode);
    for (auto& b : c.model.blocks) b.mode = mode;
  }
  return c;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

std::string fmt_value(const json& v) {
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Two aligned columns.
void print_table(const std::string& title, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  std::cout << title << "\n";
  for (const auto& [k, v] : rows) std::cout << "  " << k << std::string(width - k.size() + 2, ' ') << v << "\n";
}

void emit(const Options& o, const fs::path& path, const json& report, const std::string& title,
          const std::vector<std::pair<std::string, std::string>>& rows) {
  write_json(path, report);
  if (o.json_stdout) {
    std::cout << report.dump(2) << "\n";
  } else {
    print_table(title, rows);
    std::cout << "  report" << std::string(2, ' ') << path.string() << "\n";
  }
}

int cmd_group_info(const Options& o) {
  const auto c = resolve(o);
  const auto d = make_discretization(c.model.solid);
  json hist = json::object();
  for (const auto& [order, count] : d->group.element_order_histogram()) hist[std::to_string(order)] = count;
  const json report{{"solid", to_string(c.model.solid)},
                    {"order", d->group_order()},
                    {"num_anchors", d->num_anchors()},
                    {"stabilizer_order", d->quotient.stabilizer.size()},
                    {"element_order_histogram", hist}};
  std::vector<std::pair<std::string, std::string>> rows{{"solid", to_string(c.model.solid)},
                                                        {"order", std::to_string(d->group_order())},
                                                        {"num_anchors", std::to_string(d->num_anchors())},
                                                        {"stabilizer_order", std::to_string(d->quotient.stabilizer.size())}};
  for (const auto& [order, count] : d->group.element_order_histogram())
    rows.emplace_back("elements of order " + std::to_string(order), std::to_string(count));
  emit(o, c.out / "group_info.json", report, "group-info", rows);
  return kOk;
}

int cmd_check(const Options& o) {
  const auto c = resolve(o);
  const auto results = run_checks(c);
  json checks = json::array();
  std::vector<std::pair<std::string, std::string>> rows;
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    checks.push_back({{"name", r.name},
                      {"passed", r.passed},
                      {"max_error", std::isfinite(r.max_error) ? json(r.max_error) : json(nullptr)},
                      {"tolerance", r.tolerance},
                      {"seconds", r.seconds},
                      {"detail", r.detail}});
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s  max_error=%-11.3g tol=%-8.2g %6.2fs  ", r.passed ? "PASS" : "FAIL", r.max_error,
                  r.tolerance, r.seconds);
    rows.emplace_back(r.name, buf + r.detail);
  }
  const json report{{"passed", all}, {"num_checks", results.size()}, {"checks", checks}};
  emit(o, c.out / "check.json", report, std::string("check: ") + (all ? "all passed" : "FAILED"), rows);
  return all ? kOk : kFailed;
}

int cmd_bench(const Options& o) {
  const auto c = resolve(o);
  const auto r = run_gather_bench(c.model.solid, c.model.radius_ratio, c.bench, c.seed);
  const json report{{"points", r.points},
                    {"channels", r.channels},
                    {"trials", r.trials},
                    {"fast_seconds", r.fast_seconds},
                    {"naive_seconds", r.naive_seconds},
                    {"fast_median_seconds", r.fast_median},
                    {"naive_median_seconds", r.naive_median},
                    {"speedup", r.speedup},
                    {"fast_faster", r.fast_median < r.naive_median},
                    {"fast_locations_per_center", r.fast_locations_per_center},
                    {"naive_locations_per_center", r.naive_locations_per_center},
                    {"quotient_field_elements", r.quotient_field_elements},
                    {"group_field_elements", r.group_field_elements},
                    {"field_element_ratio", r.field_ratio},
                    {"max_abs_diff", r.max_abs_diff}};
  fs::create_directories(c.out);
  {
    std::ofstream csv(c.out / "bench.csv");
    csv << "trial,mode,seconds\n";
    for (std::size_t t = 0; t < r.trials; ++t)
      csv << t << ",fast," << r.fast_seconds[t] << "\n" << t << ",naive," << r.naive_seconds[t] << "\n";
  }
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [k, v] : report.items())
    if (!v.is_array()) rows.emplace_back(k, fmt_value(v));
  emit(o, c.out / "bench.json", report, "bench", rows);
  return r.max_abs_diff < 1e-9 ? kOk : kFailed;
}

int cmd_synth(const Options& o) {
  auto c = resolve(o);
  if (o.points) apply_override(c, "task.points", std::to_string(*o.points));
  std::vector<ShapeKind> shapes = c.task.shapes;
  if (!o.shapes.empty()) {
    shapes.clear();
    for (const auto& s : o.shapes) shapes.push_back(parse_shape_kind(s));
  }
  fs::create_directories(c.out);
  json files = json::array();
  std::vector<std::pair<std::string, std::string>> rows;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto name = to_string(shapes[i]) + "_n" + std::to_string(c.task.points) + "_seed" + std::to_string(c.seed);
    // Seed stream per shape kind, so adding shapes leaves the others unchanged.
    const auto cloud = synth_shape(shapes[i], c.task.points, c.task.noise,
                                   mix_seed(c.seed, 0x5a00 + static_cast<std::uint64_t>(shapes[i])));
    write_xyz(c.out / (name + ".xyz"), cloud.positions);
    const json meta{{"shape", to_string(shapes[i])},
                    {"points", c.task.points},
                    {"noise", c.task.noise},
                    {"seed", c.seed},
                    {"file", name + ".xyz"}};
    write_json(c.out / (name + ".json"), meta);
    files.push_back(meta);
    rows.emplace_back(to_string(shapes[i]), (c.out / (name + ".xyz")).string());
  }
  emit(o, c.out / "synth.json", json{{"files", files}}, "synth", rows);
  return kOk;
}

json metrics_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"val_acc", m.val_acc}, {"wall_seconds", m.wall_seconds}};
}

int cmd_train(const Options& o) {
  const auto c = resolve(o);
  fs::create_directories(c.out);
  std::ofstream(c.out / "config.ini") << to_ini(c);
  std::ofstream log(c.out / "metrics.jsonl", std::ios::trunc);
  auto on_epoch = [&](const EpochMetrics& m) {
    log << metrics_json(m).dump() << "\n" << std::flush;
    if (!o.json_stdout)
      std::printf("  epoch %3zu  loss %.5f  val_acc %.4f  %7.1fs\n", m.epoch, m.train_loss, m.val_acc, m.wall_seconds);
  };
  std::mt19937_64 rng(mix_seed(c.seed, 0x30de1));
  TrainReport report;
  NamedTensors state;
  if (c.task.kind == TaskKind::RotPair) {
    RotPairModel model(c.model, c.optim.head_hidden, rng);
    report = run_rotpair_training(model, c.task, c.optim, on_epoch);
    state = model.named_state();
  } else {
    ShapeClsModel model(c.model, c.task.shapes.size(), rng);
    report = run_shapecls_training(model, c.task, c.optim, on_epoch);
    state = model.named_state();
  }
  save_checkpoint(c.out / "checkpoint", state);
  const json j{{"task", to_string(c.task.kind)},
               {"epochs_run", report.epochs.size()},
               {"initial_val_acc", report.initial_val_acc},
               {"final_val_acc", report.final_val_acc()},
               {"wall_seconds", report.epochs.empty() ? 0.0 : report.epochs.back().wall_seconds},
               {"checkpoint", (c.out / "checkpoint").string()}};
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [k, v] : j.items()) rows.emplace_back(k, fmt_value(v));
  emit(o, c.out / "train.json", j, "train", rows);
  return kOk;
}

int cmd_eval(const Options& o) {
  const auto c = resolve(o);
  const fs::path stem = o.checkpoint.empty() ? c.out / "checkpoint" : fs::path(o.checkpoint);
  std::mt19937_64 rng(mix_seed(c.seed, 0x30de1));
  json j{{"task", to_string(c.task.kind)}, {"checkpoint", stem.string()}};
  double acc = 0.0;
  if (c.task.kind == TaskKind::RotPair) {
    RotPairModel model(c.model, c.optim.head_hidden, rng);
    load_checkpoint(stem, model.named_state());
    acc = evaluate_rotpair(model, c.task);
  } else {
    ShapeClsModel model(c.model, c.task.shapes.size(), rng);
    load_checkpoint(stem, model.named_state());
    acc = evaluate_shapecls(model, c.task);
    // Same clouds under one more group element each.
    std::size_t changed = 0;
    const auto& d = *model.backbone.discretization();
    for (std::size_t g : {std::size_t{1}, d.group_order() / 2, d.group_order() - 1})
      changed += evaluate_shapecls(model, c.task, g) != acc;
    j["rotated_accuracy_identical"] = changed == 0;
  }
  j["val_acc"] = acc;
  int code = kOk;
  // Compare against the last logged epoch of a run in the same directory.
  if (std::ifstream log(stem.parent_path() / "metrics.jsonl"); log) {
    std::string line, last;
    while (std::getline(log, line))
      if (!line.empty()) last = line;
    if (!last.empty()) {
      const double logged = json::parse(last).at("val_acc").get<double>();
      j["logged_val_acc"] = logged;
      j["matches_log"] = logged == acc;
      if (logged != acc) code = kFailed;
    }
  }
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [k, v] : j.items()) rows.emplace_back(k, fmt_value(v));
  emit(o, c.out / "eval.json", j, "eval", rows);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quotient-space SE(3)-equivariant point convolution toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Experiment config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed for all randomness");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--trials", o.trials, "Trials for bench and check");
    sub->add_option("--mode", o.mode, "Gather mode for every conv block")->check(CLI::IsMember({"fast", "naive"}));
    sub->add_option("--set", o.overrides, "Override a config key: section.key=value");
    sub->add_flag("--json", o.json_stdout, "Print the JSON report instead of the text summary");
    return sub;
  };
  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands{
      {common(app.add_subcommand("group-info", "Group order, anchors and stabilizer")), cmd_group_info},
      {common(app.add_subcommand("check", "Run the property and equivariance suite")), cmd_check},
      {common(app.add_subcommand("bench", "Time FastSymmetric against NaiveGather")), cmd_bench},
      {common(app.add_subcommand("synth", "Write synthetic shapes as xyz files")), cmd_synth},
      {common(app.add_subcommand("train", "Train on a synthetic task")), cmd_train},
      {common(app.add_subcommand("eval", "Evaluate a training checkpoint")), cmd_eval},
  };
  commands[3].first->add_option("--shape", o.shapes, "Shapes to write (default: task shapes)");
  commands[3].first->add_option("--points", o.points, "Points per shape");
  commands[5].first->add_option("--checkpoint", o.checkpoint, "Checkpoint stem (default: <out>/checkpoint)");

  CLI11_PARSE(app, argc, argv);
  if (commands[2].first->parsed()) o.trials_section = "bench";
  try {
    for (const auto& [sub, fn] : commands)
      if (sub->parsed()) return fn(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const CheckpointMissing& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNoCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
