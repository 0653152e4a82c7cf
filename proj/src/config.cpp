#include "e2pn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "e2pn/error.hpp"

namespace e2pn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  if (trim(s).empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

double to_double(std::string_view v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return x;
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return x;
}

std::size_t to_size(std::string_view v) { return static_cast<std::size_t>(to_u64(v)); }

double positive(double x, std::string_view what) {
  if (!(x > 0.0)) throw ConfigError(std::string(what) + " must be > 0");
  return x;
}

std::vector<Vec3> to_points(std::string_view v) {
  std::vector<Vec3> out;
  for (auto item : split(v, ',')) {
    std::istringstream in{std::string(item)};
    Vec3 p{};
    std::string rest;
    if (!(in >> p[0] >> p[1] >> p[2]) || (in >> rest)) throw ConfigError("expected 'x y z', got '" + std::string(item) + "'");
    out.push_back(p);
  }
  return out;
}

std::string fmt(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;
using SetterTable = std::map<std::string, Setter, std::less<>>;

const SetterTable& top_setters() {
  static const SetterTable t{
      {"seed", [](ExperimentConfig& c, std::string_view v) { c.seed = c.task.seed = to_u64(v); }},
      {"out", [](ExperimentConfig& c, std::string_view v) { c.out = std::string(v); }},
  };
  return t;
}

const SetterTable& model_setters() {
  static const SetterTable t{
      {"solid", [](ExperimentConfig& c, std::string_view v) { c.model.solid = parse_solid(v); }},
      {"radius_ratio",
       [](ExperimentConfig& c, std::string_view v) { c.model.radius_ratio = positive(to_double(v), "radius_ratio"); }},
      {"extra_kernel_points", [](ExperimentConfig& c, std::string_view v) { c.model.extra_kernel_points = to_points(v); }},
      {"bn_eps", [](ExperimentConfig& c, std::string_view v) { c.model.bn_eps = positive(to_double(v), "bn_eps"); }},
      {"bn_momentum", [](ExperimentConfig& c, std::string_view v) { c.model.bn_momentum = to_double(v); }},
      {"head_hidden", [](ExperimentConfig& c, std::string_view v) { c.optim.head_hidden = to_size(v); }},
  };
  return t;
}

using BlockSetter = std::function<void(BlockSpec&, std::string_view)>;
const std::map<std::string, BlockSetter, std::less<>>& block_setters() {
  static const std::map<std::string, BlockSetter, std::less<>> t{
      {"type", [](BlockSpec& b, std::string_view v) { b.kind = parse_block_kind(v); }},
      {"channels", [](BlockSpec& b, std::string_view v) { b.channels = to_size(v); }},
      {"radius", [](BlockSpec& b, std::string_view v) { b.radius = positive(to_double(v), "radius"); }},
      {"sigma", [](BlockSpec& b, std::string_view v) { b.sigma = to_double(v); }},
      {"cell", [](BlockSpec& b, std::string_view v) { b.cell = positive(to_double(v), "cell"); }},
      {"mode", [](BlockSpec& b, std::string_view v) { b.mode = parse_gather_mode(v); }},
      {"alpha", [](BlockSpec& b, std::string_view v) { b.alpha = to_double(v); }},
  };
  return t;
}

const SetterTable& task_setters() {
  static const SetterTable t{
      {"kind", [](ExperimentConfig& c, std::string_view v) { c.task.kind = parse_task_kind(v); }},
      {"shapes",
       [](ExperimentConfig& c, std::string_view v) {
         c.task.shapes.clear();
         for (auto s : split(v, ',')) c.task.shapes.push_back(parse_shape_kind(s));
         if (c.task.shapes.empty()) throw ConfigError("shapes must not be empty");
       }},
      {"train_samples", [](ExperimentConfig& c, std::string_view v) { c.task.train_samples = to_size(v); }},
      {"val_samples", [](ExperimentConfig& c, std::string_view v) { c.task.val_samples = to_size(v); }},
      {"points", [](ExperimentConfig& c, std::string_view v) { c.task.points = to_size(v); }},
      {"noise", [](ExperimentConfig& c, std::string_view v) { c.task.noise = to_double(v); }},
      {"batch", [](ExperimentConfig& c, std::string_view v) { c.task.batch_size = to_size(v); }},
  };
  return t;
}

const SetterTable& optim_setters() {
  static const SetterTable t{
      {"epochs", [](ExperimentConfig& c, std::string_view v) { c.optim.epochs = to_size(v); }},
      {"lr", [](ExperimentConfig& c, std::string_view v) { c.optim.lr = positive(to_double(v), "lr"); }},
      {"momentum", [](ExperimentConfig& c, std::string_view v) { c.optim.momentum = to_double(v); }},
      {"decay_every", [](ExperimentConfig& c, std::string_view v) { c.optim.decay_every = to_size(v); }},
      {"decay_factor", [](ExperimentConfig& c, std::string_view v) { c.optim.decay_factor = to_double(v); }},
      {"bce_weight", [](ExperimentConfig& c, std::string_view v) { c.optim.bce_weight = to_double(v); }},
      {"pos_weight", [](ExperimentConfig& c, std::string_view v) { c.optim.pos_weight = positive(to_double(v), "pos_weight"); }},
      {"target_accuracy", [](ExperimentConfig& c, std::string_view v) { c.optim.target_accuracy = to_double(v); }},
  };
  return t;
}

const SetterTable& bench_setters() {
  static const SetterTable t{
      {"points", [](ExperimentConfig& c, std::string_view v) { c.bench.points = to_size(v); }},
      {"channels", [](ExperimentConfig& c, std::string_view v) { c.bench.channels = to_size(v); }},
      {"trials", [](ExperimentConfig& c, std::string_view v) { c.bench.trials = to_size(v); }},
      {"radius", [](ExperimentConfig& c, std::string_view v) { c.bench.radius = positive(to_double(v), "radius"); }},
  };
  return t;
}

const SetterTable& check_setters() {
  static const SetterTable t{
      {"trials", [](ExperimentConfig& c, std::string_view v) { c.check.trials = to_size(v); }},
  };
  return t;
}

const SetterTable* section_table(std::string_view section) {
  if (section.empty()) return &top_setters();
  if (section == "model") return &model_setters();
  if (section == "task") return &task_setters();
  if (section == "optim") return &optim_setters();
  if (section == "bench") return &bench_setters();
  if (section == "check") return &check_setters();
  return nullptr;
}

// "block.N" -> N, or npos for any other section.
std::size_t block_index(std::string_view section) {
  constexpr std::string_view prefix = "block.";
  if (section.substr(0, prefix.size()) != prefix) return std::string::npos;
  return to_size(section.substr(prefix.size()));
}

void set_value(ExperimentConfig& c, std::map<std::size_t, BlockSpec>* blocks, std::string_view section,
               std::string_view key, std::string_view value) {
  if (const auto idx = block_index(section); idx != std::string::npos) {
    const auto it = block_setters().find(key);
    if (it == block_setters().end()) throw ConfigError("unknown key '" + std::string(key) + "' in [" + std::string(section) + "]");
    if (blocks) {
      it->second((*blocks)[idx], value);
    } else {
      if (idx >= c.model.blocks.size()) throw ConfigError("no block " + std::to_string(idx));
      it->second(c.model.blocks[idx], value);
    }
    return;
  }
  const auto* table = section_table(section);
  if (!table) throw ConfigError("unknown section [" + std::string(section) + "]");
  const auto it = table->find(key);
  if (it == table->end()) {
    const std::string where = section.empty() ? "top level" : "[" + std::string(section) + "]";
    throw ConfigError("unknown key '" + std::string(key) + "' at " + where);
  }
  it->second(c, value);
}

void validate(const ExperimentConfig& c) {
  if (c.model.blocks.empty()) throw ConfigError("model needs at least one block");
  for (std::size_t i = 0; i < c.model.blocks.size(); ++i) {
    const auto& b = c.model.blocks[i];
    if (b.kind == BlockSpec::Kind::Conv && (b.channels == 0 || !(b.radius > 0.0)))
      throw ConfigError("conv block " + std::to_string(i) + " needs channels and radius");
    if (b.kind == BlockSpec::Kind::Pool && !(b.cell > 0.0))
      throw ConfigError("pool block " + std::to_string(i) + " needs cell");
  }
  if (c.task.batch_size == 0) throw ConfigError("batch must be > 0");
  if (c.task.points < 16) throw ConfigError("points must be >= 16");
  if (c.optim.head_hidden == 0) throw ConfigError("head_hidden must be > 0");
  if (c.bench.trials < 3) throw ConfigError("bench trials must be >= 3");
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  BlockSpec conv, bn, relu;
  conv.kind = BlockSpec::Kind::Conv;
  bn.kind = BlockSpec::Kind::BatchNorm;
  relu.kind = BlockSpec::Kind::ReLU;
  for (auto [channels, radius] : {std::pair{16u, 0.4}, std::pair{32u, 0.6}}) {
    conv.channels = channels;
    conv.radius = radius;
    c.model.blocks.insert(c.model.blocks.end(), {conv, bn, relu});
  }
  // One positive anchor match per 60 candidate rotations.
  c.optim.pos_weight = 59.0;
  return c;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c = ExperimentConfig::defaults();
  std::map<std::size_t, BlockSpec> blocks;
  std::string section;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (const auto idx = block_index(section); idx != std::string::npos) {
          if (blocks.count(idx)) throw ConfigError("duplicate section [" + section + "]");
          blocks[idx];
        } else if (!section_table(section)) {
          throw ConfigError("unknown section [" + section + "]");
        }
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key");
      const std::string full = section + "." + std::string(key);
      if (seen.count(full)) throw ConfigError("duplicate key '" + std::string(key) + "'");
      seen[full] = line_no;
      set_value(c, &blocks, section, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  if (!blocks.empty()) {
    c.model.blocks.clear();
    for (const auto& [idx, b] : blocks) {
      if (idx != c.model.blocks.size()) throw ConfigError("block sections must be numbered 0, 1, ... without gaps");
      c.model.blocks.push_back(b);
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(ExperimentConfig& config, std::string_view dotted_key, std::string_view value) {
  const auto dot = dotted_key.rfind('.');
  const auto section = dot == std::string_view::npos ? std::string_view{} : dotted_key.substr(0, dot);
  const auto key = dot == std::string_view::npos ? dotted_key : dotted_key.substr(dot + 1);
  set_value(config, nullptr, section, key, trim(value));
  validate(config);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "seed = " << c.seed << "\n";
  o << "out = " << c.out.string() << "\n\n";
  o << "[model]\n";
  o << "solid = " << to_string(c.model.solid) << "\n";
  o << "radius_ratio = " << fmt(c.model.radius_ratio) << "\n";
  o << "extra_kernel_points =";
  for (std::size_t i = 0; i < c.model.extra_kernel_points.size(); ++i) {
    const auto& p = c.model.extra_kernel_points[i];
    o << (i ? ", " : " ") << fmt(p[0]) << " " << fmt(p[1]) << " " << fmt(p[2]);
  }
  o << "\n";
  o << "bn_eps = " << fmt(c.model.bn_eps) << "\n";
  o << "bn_momentum = " << fmt(c.model.bn_momentum) << "\n";
  o << "head_hidden = " << c.optim.head_hidden << "\n";
  for (std::size_t i = 0; i < c.model.blocks.size(); ++i) {
    const auto& b = c.model.blocks[i];
    o << "\n[block." << i << "]\n";
    o << "type = " << to_string(b.kind) << "\n";
    switch (b.kind) {
      case BlockSpec::Kind::Conv:
        o << "channels = " << b.channels << "\n";
        o << "radius = " << fmt(b.radius) << "\n";
        o << "sigma = " << fmt(b.sigma) << "\n";
        o << "mode = " << to_string(b.mode) << "\n";
        break;
      case BlockSpec::Kind::LeakyReLU: o << "alpha = " << fmt(b.alpha) << "\n"; break;
      case BlockSpec::Kind::Pool: o << "cell = " << fmt(b.cell) << "\n"; break;
      default: break;
    }
  }
  o << "\n[task]\n";
  o << "kind = " << to_string(c.task.kind) << "\n";
  o << "shapes =";
  for (std::size_t i = 0; i < c.task.shapes.size(); ++i) o << (i ? ", " : " ") << to_string(c.task.shapes[i]);
  o << "\n";
  o << "train_samples = " << c.task.train_samples << "\n";
  o << "val_samples = " << c.task.val_samples << "\n";
  o << "points = " << c.task.points << "\n";
  o << "noise = " << fmt(c.task.noise) << "\n";
  o << "batch = " << c.task.batch_size << "\n";
  o << "\n[optim]\n";
  o << "epochs = " << c.optim.epochs << "\n";
  o << "lr = " << fmt(c.optim.lr) << "\n";
  o << "momentum = " << fmt(c.optim.momentum) << "\n";
  o << "decay_every = " << c.optim.decay_every << "\n";
  o << "decay_factor = " << fmt(c.optim.decay_factor) << "\n";
  o << "bce_weight = " << fmt(c.optim.bce_weight) << "\n";
  o << "pos_weight = " << fmt(c.optim.pos_weight) << "\n";
  o << "target_accuracy = " << fmt(c.optim.target_accuracy) << "\n";
  o << "\n[bench]\n";
  o << "points = " << c.bench.points << "\n";
  o << "channels = " << c.bench.channels << "\n";
  o << "trials = " << c.bench.trials << "\n";
  o << "radius = " << fmt(c.bench.radius) << "\n";
  o << "\n[check]\n";
  o << "trials = " << c.check.trials << "\n";
  return o.str();
}

}  // namespace e2pn
