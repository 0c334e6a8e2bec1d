#include "calf_cli/run_config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "calf/container.hpp"
#include "calf/error.hpp"
#include "calf/m4.hpp"

namespace calf::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  return "config key '" + std::string(key) + "': '" + std::string(value) + "' is not " +
         std::string(expected);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(bad_value(key, v, "a count"));
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(bad_value(key, v, "an integer"));
  return out;
}

double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(bad_value(key, v, "a number"));
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(bad_value(key, v, "a boolean"));
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto comma = v.find(',', pos);
    auto item = trim(v.substr(pos, comma == v.npos ? v.npos : comma - pos));
    if (!item.empty()) out.push_back(item);
    if (comma == v.npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string path_value(std::string_view v, const std::filesystem::path& base) {
  if (v.empty() || v == "synthetic") return std::string(v);
  std::filesystem::path p{std::string(v)};
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal().string();
}

// Wraps a loader so that any calf::Error is reported as a configuration error.
template <class F>
auto as_config(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  using P = std::filesystem::path;
  static const std::vector<Field> table = {
      {"dataset", [](RunConfig& c, std::string_view v, const P& b) { c.dataset = path_value(v, b); },
       [](const RunConfig& c) { return c.dataset; }},
      {"dataset.family",
       [](RunConfig& c, std::string_view v, const P&) {
         if (v != "ett" && v != "m4" && v != "other") {
           throw ConfigError(bad_value("dataset.family", v, "ett, m4 or other"));
         }
         c.family = std::string(v);
       },
       [](const RunConfig& c) { return c.family; }},
      {"dataset.split",
       [](RunConfig& c, std::string_view v, const P&) {
         c.split.mode = as_config("dataset.split", [&] { return parse_split_mode(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.split.mode)); }},
      {"dataset.train_ratio",
       [](RunConfig& c, std::string_view v, const P&) { c.split.train_ratio = to_real("dataset.train_ratio", v); },
       [](const RunConfig& c) { return real_text(c.split.train_ratio); }},
      {"dataset.val_ratio",
       [](RunConfig& c, std::string_view v, const P&) { c.split.val_ratio = to_real("dataset.val_ratio", v); },
       [](const RunConfig& c) { return real_text(c.split.val_ratio); }},
      {"dataset.train_fraction",
       [](RunConfig& c, std::string_view v, const P&) {
         c.split.few_shot_fraction = to_real("dataset.train_fraction", v);
       },
       [](const RunConfig& c) { return real_text(c.split.few_shot_fraction); }},
      {"synthetic.rows",
       [](RunConfig& c, std::string_view v, const P&) { c.synthetic.rows = to_size("synthetic.rows", v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.rows); }},
      {"synthetic.channels",
       [](RunConfig& c, std::string_view v, const P&) { c.synthetic.channels = to_size("synthetic.channels", v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.channels); }},
      {"synthetic.noise",
       [](RunConfig& c, std::string_view v, const P&) { c.synthetic.noise = to_real("synthetic.noise", v); },
       [](const RunConfig& c) { return real_text(c.synthetic.noise); }},
      {"synthetic.seed",
       [](RunConfig& c, std::string_view v, const P&) { c.synthetic.seed = to_u64("synthetic.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.synthetic.seed); }},
      {"m4.dir", [](RunConfig& c, std::string_view v, const P& b) { c.m4_dir = path_value(v, b); },
       [](const RunConfig& c) { return c.m4_dir; }},
      {"m4.frequency",
       [](RunConfig& c, std::string_view v, const P&) {
         as_config("m4.frequency", [&] { return parse_m4_frequency(v); });
         c.m4_frequency = std::string(v);
       },
       [](const RunConfig& c) { return c.m4_frequency; }},
      {"m4.windows_per_series",
       [](RunConfig& c, std::string_view v, const P&) {
         c.m4_windows_per_series = to_size("m4.windows_per_series", v);
       },
       [](const RunConfig& c) { return std::to_string(c.m4_windows_per_series); }},
      {"backbone", [](RunConfig& c, std::string_view v, const P& b) { c.backbone_path = path_value(v, b); },
       [](const RunConfig& c) { return c.backbone_path; }},
      {"backbone.layers",
       [](RunConfig& c, std::string_view v, const P&) { c.backbone.layers = to_size("backbone.layers", v); },
       [](const RunConfig& c) { return std::to_string(c.backbone.layers); }},
      {"backbone.heads",
       [](RunConfig& c, std::string_view v, const P&) { c.backbone.heads = to_size("backbone.heads", v); },
       [](const RunConfig& c) { return std::to_string(c.backbone.heads); }},
      {"backbone.causal_mask",
       [](RunConfig& c, std::string_view v, const P&) {
         c.backbone.causal_mask = to_bool("backbone.causal_mask", v);
       },
       [](const RunConfig& c) { return std::string(c.backbone.causal_mask ? "true" : "false"); }},
      {"principal", [](RunConfig& c, std::string_view v, const P& b) { c.principal_path = path_value(v, b); },
       [](const RunConfig& c) { return c.principal_path; }},
      {"vocab", [](RunConfig& c, std::string_view v, const P& b) { c.vocab_path = path_value(v, b); },
       [](const RunConfig& c) { return c.vocab_path; }},
      {"pca.components",
       [](RunConfig& c, std::string_view v, const P&) { c.pca_components = to_size("pca.components", v); },
       [](const RunConfig& c) { return std::to_string(c.pca_components); }},
      {"input_len",
       [](RunConfig& c, std::string_view v, const P&) { c.input_len = to_size("input_len", v); },
       [](const RunConfig& c) { return std::to_string(c.input_len); }},
      {"horizons",
       [](RunConfig& c, std::string_view v, const P&) {
         c.horizons.clear();
         for (auto h : split_list(v)) c.horizons.push_back(to_size("horizons", h));
       },
       [](const RunConfig& c) {
         std::string out;
         for (auto h : c.horizons) out += (out.empty() ? "" : ",") + std::to_string(h);
         return out;
       }},
      {"lora.rank",
       [](RunConfig& c, std::string_view v, const P&) { c.lora_rank = to_size("lora.rank", v); },
       [](const RunConfig& c) { return std::to_string(c.lora_rank); }},
      {"lora.alpha",
       [](RunConfig& c, std::string_view v, const P&) { c.lora_alpha = to_real("lora.alpha", v); },
       [](const RunConfig& c) { return real_text(c.lora_alpha); }},
      {"lora.targets",
       [](RunConfig& c, std::string_view v, const P&) {
         c.lora_targets.clear();
         for (auto t : split_list(v)) {
           c.lora_targets.push_back(as_config("lora.targets", [&] { return parse_attn_matrix(t); }));
         }
       },
       [](const RunConfig& c) {
         std::string out;
         for (auto t : c.lora_targets) out += (out.empty() ? "" : ",") + std::string(to_string(t));
         return out;
       }},
      {"match.cross_scale",
       [](RunConfig& c, std::string_view v, const P&) {
         c.cross_scale = as_config("match.cross_scale", [&] { return parse_cross_scale(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.cross_scale)); }},
      {"loss.gamma",
       [](RunConfig& c, std::string_view v, const P&) { c.train.weights.gamma = to_real("loss.gamma", v); },
       [](const RunConfig& c) { return real_text(c.train.weights.gamma); }},
      {"loss.lambda1",
       [](RunConfig& c, std::string_view v, const P&) { c.train.weights.lambda1 = to_real("loss.lambda1", v); },
       [](const RunConfig& c) { return real_text(c.train.weights.lambda1); }},
      {"loss.lambda2",
       [](RunConfig& c, std::string_view v, const P&) { c.train.weights.lambda2 = to_real("loss.lambda2", v); },
       [](const RunConfig& c) { return real_text(c.train.weights.lambda2); }},
      {"loss.enable_feature",
       [](RunConfig& c, std::string_view v, const P&) {
         c.train.enable_feature = to_bool("loss.enable_feature", v);
       },
       [](const RunConfig& c) { return std::string(c.train.enable_feature ? "true" : "false"); }},
      {"loss.enable_output",
       [](RunConfig& c, std::string_view v, const P&) { c.train.enable_output = to_bool("loss.enable_output", v); },
       [](const RunConfig& c) { return std::string(c.train.enable_output ? "true" : "false"); }},
      {"loss.stop_gradient_textual",
       [](RunConfig& c, std::string_view v, const P&) {
         c.train.stop_gradient_textual = to_bool("loss.stop_gradient_textual", v);
       },
       [](const RunConfig& c) { return std::string(c.train.stop_gradient_textual ? "true" : "false"); }},
      {"sim.sup",
       [](RunConfig& c, std::string_view v, const P&) {
         c.sim_sup = as_config("sim.sup", [&] { return parse_loss_kind(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.effective_sims().sup)); }},
      {"sim.feature",
       [](RunConfig& c, std::string_view v, const P&) {
         c.sim_feature = as_config("sim.feature", [&] { return parse_loss_kind(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.effective_sims().feature)); }},
      {"sim.output",
       [](RunConfig& c, std::string_view v, const P&) {
         c.sim_output = as_config("sim.output", [&] { return parse_loss_kind(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.effective_sims().output)); }},
      {"train.epochs",
       [](RunConfig& c, std::string_view v, const P&) { c.train.epochs = to_size("train.epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.batch_size",
       [](RunConfig& c, std::string_view v, const P&) { c.train.batch_size = to_size("train.batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.patience",
       [](RunConfig& c, std::string_view v, const P&) { c.train.patience = to_size("train.patience", v); },
       [](const RunConfig& c) { return std::to_string(c.train.patience); }},
      {"train.max_batches_per_epoch",
       [](RunConfig& c, std::string_view v, const P&) {
         c.train.max_batches_per_epoch = to_size("train.max_batches_per_epoch", v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.max_batches_per_epoch); }},
      {"train.shuffle",
       [](RunConfig& c, std::string_view v, const P&) { c.train.shuffle = to_bool("train.shuffle", v); },
       [](const RunConfig& c) { return std::string(c.train.shuffle ? "true" : "false"); }},
      {"train.season",
       [](RunConfig& c, std::string_view v, const P&) { c.train.season = to_size("train.season", v); },
       [](const RunConfig& c) { return std::to_string(c.train.season); }},
      {"train.lr",
       [](RunConfig& c, std::string_view v, const P&) { c.train.adam.learning_rate = to_real("train.lr", v); },
       [](const RunConfig& c) { return real_text(c.train.adam.learning_rate); }},
      {"train.beta1",
       [](RunConfig& c, std::string_view v, const P&) { c.train.adam.beta1 = to_real("train.beta1", v); },
       [](const RunConfig& c) { return real_text(c.train.adam.beta1); }},
      {"train.beta2",
       [](RunConfig& c, std::string_view v, const P&) { c.train.adam.beta2 = to_real("train.beta2", v); },
       [](const RunConfig& c) { return real_text(c.train.adam.beta2); }},
      {"train.eps",
       [](RunConfig& c, std::string_view v, const P&) { c.train.adam.epsilon = to_real("train.eps", v); },
       [](const RunConfig& c) { return real_text(c.train.adam.epsilon); }},
      {"norm",
       [](RunConfig& c, std::string_view v, const P&) {
         c.train.norm = as_config("norm", [&] { return parse_norm_mode(v); });
       },
       [](const RunConfig& c) { return std::string(to_string(c.train.norm)); }},
      {"eval.batch_size",
       [](RunConfig& c, std::string_view v, const P&) { c.eval_batch = to_size("eval.batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.eval_batch); }},
      {"output_dir", [](RunConfig& c, std::string_view v, const P& b) { c.output_dir = path_value(v, b); },
       [](const RunConfig& c) { return c.output_dir; }},
      {"seed", [](RunConfig& c, std::string_view v, const P&) { c.seed = to_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void parse_into(RunConfig& config, std::string_view text, const std::filesystem::path& base,
                int depth) {
  if (depth > 16) throw ConfigError("config includes nested deeper than 16 levels");
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != line.npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == line.npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key == "include") {
      std::filesystem::path inc{std::string(value)};
      if (inc.is_relative() && !base.empty()) inc = base / inc;
      std::vector<std::uint8_t> bytes;
      try {
        bytes = read_file_bytes(inc);
      } catch (const Error& e) {
        throw ConfigError("cannot include " + inc.string() + ": " + e.what());
      }
      parse_into(config,
                 std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                 inc.parent_path(), depth + 1);
      continue;
    }
    config.set(key, value, base);
  }
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value, const std::filesystem::path& base) {
  if (key.starts_with("m4.naive2.")) {
    m4_naive2[std::string(key.substr(10))] = to_real(key, value);
    return;
  }
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + std::string(key) + "'");
  f->set(*this, value, base);
}

std::string RunConfig::get(std::string_view key) const {
  if (key.starts_with("m4.naive2.")) {
    auto it = m4_naive2.find(std::string(key.substr(10)));
    if (it == m4_naive2.end()) throw ConfigError("config key '" + std::string(key) + "' is not set");
    return real_text(it->second);
  }
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return f->get(*this);
}

std::vector<std::string_view> RunConfig::keys() {
  std::vector<std::string_view> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  for (const auto& [k, v] : m4_naive2) out += "m4.naive2." + k + " = " + real_text(v) + "\n";
  return out;
}

void RunConfig::validate() const {
  if (input_len == 0) throw ConfigError("input_len must be at least 1");
  if (horizons.empty()) throw ConfigError("horizons must list at least one horizon");
  for (auto h : horizons)
    if (h == 0) throw ConfigError("horizons must be positive");
  if (backbone_path.empty()) throw ConfigError("no backbone weight file configured (key 'backbone')");
  if (principal_path.empty() && pca_components == 0) {
    throw ConfigError("configure either 'principal' or 'pca.components'");
  }
  split.validate();
  auto t = train;
  t.sims = effective_sims();
  t.validate();
}

ModelConfig RunConfig::model_config(std::size_t horizon) const {
  ModelConfig m;
  m.backbone = backbone;
  m.input_len = input_len;
  m.horizon = horizon;
  m.lora_rank = lora_rank;
  m.lora_alpha = lora_alpha;
  m.lora_targets = lora_targets;
  m.cross_scale = cross_scale;
  return m;
}

SimSpec RunConfig::effective_sims() const {
  auto s = SimSpec::for_family(family);
  if (sim_sup) s.sup = *sim_sup;
  if (sim_feature) s.feature = *sim_feature;
  if (sim_output) s.output = *sim_output;
  return s;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base, RunConfig start) {
  parse_into(start, text, base, 0);
  return start;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                          path.parent_path());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == assignment.npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace calf::cli
