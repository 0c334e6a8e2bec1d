#include "calf_cli/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>

#include "calf/container.hpp"
#include "calf/log.hpp"
#include "calf/m4.hpp"
#include "calf/match.hpp"
#include "calf/model.hpp"
#include "calf/pca.hpp"

namespace calf::cli {

int exit_code_for(const std::exception& e) noexcept {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return exit_usage;
  switch (err->kind()) {
    case ErrorKind::usage:
    case ErrorKind::dimension: return exit_usage;
    case ErrorKind::config:
    case ErrorKind::manifest: return exit_config;
    case ErrorKind::parse:
    case ErrorKind::capacity: return exit_data;
    case ErrorKind::format: return exit_format;
    case ErrorKind::numeric: return exit_numeric;
  }
  return exit_usage;
}

namespace {

namespace fs = std::filesystem;

// Writes every line to the console stream and to a log file.
class RunLog {
 public:
  RunLog(std::ostream& out, const fs::path& file) : out_(out) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    file_.open(file, std::ios::trunc);
    if (!file_) throw UsageError("cannot write " + file.string());
  }
  void line(const std::string& s) {
    out_ << s << '\n';
    file_ << s << '\n';
    file_.flush();
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

void check_runtime(const RuntimeOptions& r) {
  if (r.device != "cpu") throw UsageError("unsupported device '" + r.device + "' (only cpu)");
  if (r.threads == 0) throw UsageError("--threads must be at least 1");
  if (r.threads > 1) {
    warn("only single-threaded execution is implemented; ignoring --threads " +
         std::to_string(r.threads));
  }
}

RunConfig resolve(const fs::path& path, const std::vector<std::string>& overrides,
                  const RunOptions* run, const RuntimeOptions& runtime,
                  const std::optional<fs::path>& out_dir) {
  check_runtime(runtime);
  auto cfg = load_run_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  if (run) {
    if (run->train_fraction) cfg.split.few_shot_fraction = *run->train_fraction;
    if (run->no_feature_loss) cfg.train.enable_feature = false;
    if (run->no_output_loss) cfg.train.enable_output = false;
  }
  if (runtime.seed) cfg.seed = *runtime.seed;
  if (out_dir) cfg.output_dir = out_dir->string();
  cfg.train.sims = cfg.effective_sims();
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

struct Context {
  std::shared_ptr<const Backbone<float>> backbone;
  PrincipalEmbeddings<float> principal;
};

Context load_context(const RunConfig& cfg, RunLog& log) {
  BackboneConfig bc = cfg.backbone;
  bc.width = 0;
  bc.vocab_size = 0;
  bc.max_positions = 0;
  Context ctx;
  ctx.backbone = std::make_shared<const Backbone<float>>(load_backbone<float>(cfg.backbone_path, bc));
  if (!cfg.principal_path.empty()) {
    ctx.principal = load_principal<float>(cfg.principal_path);
  } else {
    ctx.principal = extract_principal_embeddings(ctx.backbone->token_embedding, cfg.pca_components);
  }
  const auto& b = ctx.backbone->config;
  log.line("backbone layers=" + std::to_string(b.layers) + " width=" + std::to_string(b.width) +
           " heads=" + std::to_string(b.heads) + " vocab=" + std::to_string(b.vocab_size) +
           " principal_components=" + std::to_string(ctx.principal.count()) +
           " principal_evr=" + num(ctx.principal.explained_variance_ratio));
  return ctx;
}

SeriesDataset load_dataset(const std::string& spec, const RunConfig& cfg) {
  if (spec == "synthetic") return synthetic_series(cfg.synthetic);
  return load_csv(spec);
}

fs::path checkpoint_name(const fs::path& dir, std::size_t horizon) {
  return dir / ("checkpoint_H" + std::to_string(horizon) + ".calf");
}

std::size_t checkpoint_horizon(const Container& c) {
  const auto& rec = c.at("temporal.head.bias");
  if (rec.shape.size() != 1) throw ConfigError("checkpoint head bias is not a vector");
  return rec.shape[0];
}

// (horizon, file) pairs: a directory supplies checkpoint_H<h>.calf for each
// configured horizon, a single file supplies its own horizon.
std::vector<std::pair<std::size_t, fs::path>> resolve_checkpoints(const fs::path& ckpt,
                                                                  const std::vector<std::size_t>& horizons) {
  std::vector<std::pair<std::size_t, fs::path>> out;
  if (fs::is_directory(ckpt)) {
    for (auto h : horizons) {
      auto p = checkpoint_name(ckpt, h);
      if (!fs::exists(p)) throw ConfigError("no checkpoint for horizon " + std::to_string(h) + " (" + p.string() + ")");
      out.emplace_back(h, p);
    }
  } else {
    out.emplace_back(checkpoint_horizon(Container::load(ckpt)), ckpt);
  }
  return out;
}

void finish(RunResult& result, const RunConfig& cfg, RunLog& log) {
  result.out_dir = cfg.output_dir;
  result.config = cfg;
  write_text(result.out_dir / "resolved_config.txt", cfg.to_text());
  write_text(result.out_dir / "metrics.csv", result.report.to_csv());
  write_text(result.out_dir / "metrics.txt", result.report.to_text());
  std::string text = result.report.to_text();
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    log.line("report " + text.substr(pos, nl - pos));
    pos = nl + 1;
  }
}

const std::vector<std::string>& long_term_metrics() {
  static const std::vector<std::string> m{"mse", "mae"};
  return m;
}

void add_long_term_row(RunResult& result, std::size_t horizon, const EvalResult& eval, RunLog& log,
                       const WindowSet& test) {
  result.report.add(std::to_string(horizon), eval.windows, eval.values);
  auto naive = evaluate_naive(test, long_term_metrics());
  log.line("horizon=" + std::to_string(horizon) + " test_windows=" + std::to_string(eval.windows) +
           " mse=" + num(eval.values.at("mse")) + " mae=" + num(eval.values.at("mae")) +
           " naive_mse=" + num(naive.values.at("mse")) + " naive_mae=" + num(naive.values.at("mae")) +
           " textual_forwards=" + std::to_string(eval.textual_forwards));
}

// Subsets of an M4 run with the model configuration each one needs.
ModelConfig m4_model_config(const RunConfig& cfg, const M4Subset& s) {
  auto mc = cfg.model_config(s.horizon);
  mc.input_len = s.input_len;
  return mc;
}

void add_m4_row(RunResult& result, const RunConfig& cfg, const CalfModel<float>& model,
                const M4Subset& subset, RunLog& log) {
  auto scores = evaluate_m4(model, subset, cfg.train.norm);
  M4Reference ref;
  auto s_it = cfg.m4_naive2.find(subset.name + ".smape");
  auto m_it = cfg.m4_naive2.find(subset.name + ".mase");
  if (s_it != cfg.m4_naive2.end() && m_it != cfg.m4_naive2.end()) {
    ref = {s_it->second, m_it->second, false};
  } else {
    ref = seasonal_naive_reference(subset);
  }
  const double o = owa(scores.smape, scores.mase, ref.smape, ref.mase);
  std::string label = subset.name;
  for (auto& ch : label) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  result.report.add(label, scores.series, {{"smape", scores.smape}, {"mase", scores.mase}, {"owa", o}});
  log.line("subset=" + label + " horizon=" + std::to_string(subset.horizon) +
           " series=" + std::to_string(scores.series) + " skipped=" + std::to_string(subset.skipped) +
           " smape=" + num(scores.smape) + " mase=" + num(scores.mase) + " owa=" + num(o) +
           " owa_reference=" + (ref.approximate ? "seasonal_naive(approximate)" : "naive2") +
           " ref_smape=" + num(ref.smape) + " ref_mase=" + num(ref.mase));
}

StepLogger step_logger(std::ofstream& train_log, std::size_t horizon) {
  return [&train_log, horizon](const StepReport& r) {
    train_log << "horizon=" << horizon << ' ' << format_step(r) << '\n';
  };
}

void log_fit(RunLog& log, std::size_t horizon, const FitReport& fit, double seconds) {
  log.line("horizon=" + std::to_string(horizon) + " epochs=" + std::to_string(fit.epochs_run) +
           " best_epoch=" + std::to_string(fit.best_epoch) +
           " optimizer_steps=" + std::to_string(fit.optimizer_steps) +
           " train_seconds=" + num(seconds));
}

}  // namespace

void cmd_init_backbone(const InitBackboneOptions& options, std::ostream& log) {
  options.config.validate();
  auto b = random_backbone<float>(options.config, options.seed);
  save_backbone(options.out, b);
  log << "wrote " << options.out.string() << " layers=" << options.config.layers
      << " width=" << options.config.width << " vocab=" << options.config.vocab_size
      << " parameters=" << b.parameter_count() << '\n';
  if (!options.vocab_out.empty()) {
    std::string text;
    for (std::size_t i = 0; i < options.config.vocab_size; ++i) text += "tok" + std::to_string(i) + "\n";
    write_text(options.vocab_out, text);
  }
}

void cmd_synth(const SynthOptions& options, std::ostream& log) {
  save_csv(options.out, synthetic_series(options.spec));
  log << "wrote " << options.out.string() << " rows=" << options.spec.rows
      << " channels=" << options.spec.channels << '\n';
}

PcaExtractResult cmd_pca_extract(const PcaExtractOptions& options, std::ostream& log) {
  if (options.components == 0) throw UsageError("--d must be at least 1");
  auto container = Container::load(options.weights);
  auto wte = container.at(manifest::token_embedding).to_tensor<double>();
  if (wte.rank() != 2) throw ConfigError("token embedding tensor is not a matrix");
  auto spectrum = principal_spectrum(wte);
  PcaOptions opts;
  opts.variance_scaled = !options.unscaled;
  std::size_t d = options.components;
  if (d > spectrum.rank) {
    warn("--d " + std::to_string(d) + " exceeds the dictionary rank " + std::to_string(spectrum.rank) +
         "; clamped to " + std::to_string(spectrum.rank));
    d = spectrum.rank;
  }
  auto principal = principal_from_spectrum<float>(spectrum, d, opts);
  save_principal(options.out, principal);

  PcaExtractResult result;
  result.components = principal.count();
  result.explained_variance_ratio = principal.explained_variance_ratio;
  log << "dictionary rows=" << spectrum.samples << " width=" << spectrum.mean.size()
      << " rank=" << spectrum.rank << '\n';
  for (std::size_t i = 0; i < result.components; ++i) {
    log << "component=" << i + 1 << " variance=" << num(spectrum.variances[i])
        << " cumulative_evr=" << num(spectrum.explained_variance_ratio(i + 1)) << '\n';
  }
  log << "components=" << result.components
      << " explained_variance_ratio=" << num(result.explained_variance_ratio) << '\n';
  log << "wrote " << options.out.string() << '\n';
  return result;
}

RunResult cmd_train(const RunOptions& options, std::ostream& out) {
  auto cfg = resolve(options.config, options.overrides, &options, options.runtime, options.out_dir);
  const fs::path dir = cfg.output_dir;
  write_text(dir / "resolved_config.txt", cfg.to_text());
  RunLog log(out, dir / "train_run.txt");
  std::ofstream train_log(dir / "train_log.txt", std::ios::trunc);
  if (!train_log) throw UsageError("cannot write " + (dir / "train_log.txt").string());
  auto ctx = load_context(cfg, log);
  log.line("losses sup=" + std::string(to_string(cfg.train.sims.sup)) +
           " feature=" + std::string(to_string(cfg.train.sims.feature)) +
           " output=" + std::string(to_string(cfg.train.sims.output)) +
           " enable_feature=" + (cfg.train.enable_feature ? "true" : "false") +
           " enable_output=" + (cfg.train.enable_output ? "true" : "false"));

  RunResult result;
  if (cfg.family == "m4") {
    auto col = load_m4(cfg.m4_dir, parse_m4_frequency(cfg.m4_frequency));
    for (const auto& subset : col.subsets) {
      if (subset.series.empty()) {
        warn(subset.name + ": no usable series, skipped");
        continue;
      }
      auto model = make_model<float>(m4_model_config(cfg, subset), ctx.backbone, ctx.principal, cfg.seed);
      auto tc = cfg.train;
      tc.season = subset.season;
      auto train = m4_training_windows(subset, cfg.m4_windows_per_series);
      auto val = m4_validation_windows(subset);
      log.line("subset=" + subset.name + " horizon=" + std::to_string(subset.horizon) +
               " input_len=" + std::to_string(subset.input_len) +
               " train_windows=" + std::to_string(train.size()));
      const auto t0 = std::chrono::steady_clock::now();
      auto fit_report = fit(model, train, &val, tc, step_logger(train_log, subset.horizon));
      log_fit(log, subset.horizon, fit_report,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      result.optimizer_steps += fit_report.optimizer_steps;
      result.fits.push_back(fit_report);
      save_checkpoint(checkpoint_name(dir, subset.horizon), model);
      add_m4_row(result, cfg, model, subset, log);
    }
  } else {
    auto ds = load_dataset(cfg.dataset, cfg);
    for (auto h : cfg.horizons) {
      const WindowSpec ws{cfg.input_len, h};
      auto parts = split(ds, cfg.split, ws.span());
      auto train = windows(parts.train, ws);
      auto val = windows(parts.val, ws);
      auto test = windows(parts.test, ws);
      result.train_rows = parts.train.rows();
      result.full_train_rows = parts.full_train_rows;
      log.line("horizon=" + std::to_string(h) + " train_rows=" + std::to_string(parts.train.rows()) +
               " full_train_rows=" + std::to_string(parts.full_train_rows) +
               " train_fraction=" + num(cfg.split.few_shot_fraction) +
               " train_windows=" + std::to_string(train.size()) +
               " val_windows=" + std::to_string(val.size()) +
               " test_windows=" + std::to_string(test.size()));
      auto model = make_model<float>(cfg.model_config(h), ctx.backbone, ctx.principal, cfg.seed);
      if (h == cfg.horizons.front()) {
        log.line("parameters trainable=" + std::to_string(model.trainable_count()) +
                 " frozen=" + std::to_string(model.frozen_count()));
      }
      const auto t0 = std::chrono::steady_clock::now();
      auto fit_report = fit(model, train, &val, cfg.train, step_logger(train_log, h));
      log_fit(log, h, fit_report,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      result.optimizer_steps += fit_report.optimizer_steps;
      result.fits.push_back(fit_report);
      save_checkpoint(checkpoint_name(dir, h), model);
      auto eval = evaluate(model, test, long_term_metrics(), cfg.train.norm, cfg.eval_batch);
      add_long_term_row(result, h, eval, log, test);
    }
  }
  log.line("optimizer_steps=" + std::to_string(result.optimizer_steps));
  finish(result, cfg, log);
  return result;
}

namespace {

RunResult evaluate_checkpoints(const RunOptions& options, std::ostream& out, bool zero_shot) {
  auto cfg = resolve(options.config, options.overrides, nullptr, options.runtime, options.out_dir);
  if (zero_shot) {
    if (options.eval_dataset.empty()) throw UsageError("zero-shot needs --eval-dataset");
    cfg.dataset = options.eval_dataset == "synthetic" ? "synthetic" : fs::absolute(options.eval_dataset).string();
    cfg.family = cfg.family == "m4" ? "other" : cfg.family;
    cfg.split.few_shot_fraction = 1.0;
  }
  if (!options.out_dir) cfg.output_dir = (fs::path(cfg.output_dir) / (zero_shot ? "zero_shot" : "eval")).string();
  const fs::path dir = cfg.output_dir;
  RunLog log(out, dir / (zero_shot ? "zero_shot_run.txt" : "eval_run.txt"));
  auto ctx = load_context(cfg, log);
  RunResult result;

  if (cfg.family == "m4") {
    auto col = load_m4(cfg.m4_dir, parse_m4_frequency(cfg.m4_frequency));
    for (const auto& subset : col.subsets) {
      if (subset.series.empty()) continue;
      auto model = make_model<float>(m4_model_config(cfg, subset), ctx.backbone, ctx.principal, cfg.seed);
      fs::path ckpt = fs::is_directory(options.checkpoint)
                          ? checkpoint_name(options.checkpoint, subset.horizon)
                          : options.checkpoint;
      load_checkpoint(model, ckpt);
      add_m4_row(result, cfg, model, subset, log);
    }
  } else {
    auto ds = load_dataset(cfg.dataset, cfg);
    log.line("dataset=" + cfg.dataset + " rows=" + std::to_string(ds.rows()) +
             " channels=" + std::to_string(ds.cols()));
    for (auto& [h, ckpt] : resolve_checkpoints(options.checkpoint, cfg.horizons)) {
      const WindowSpec ws{cfg.input_len, h};
      auto parts = split(ds, cfg.split, ws.span());
      auto test = windows(parts.test, ws);
      auto model = make_model<float>(cfg.model_config(h), ctx.backbone, ctx.principal, cfg.seed);
      load_checkpoint(model, ckpt);
      auto eval = evaluate(model, test, long_term_metrics(), cfg.train.norm, cfg.eval_batch);
      add_long_term_row(result, h, eval, log, test);
    }
  }
  log.line("optimizer_steps=0");
  finish(result, cfg, log);
  return result;
}

std::vector<std::string> read_words(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read word list " + path.string());
  std::vector<std::string> words;
  std::string w;
  while (std::getline(in, w)) {
    while (!w.empty() && (w.back() == '\r' || w.back() == ' ')) w.pop_back();
    if (!w.empty()) words.push_back(w);
  }
  return words;
}

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& row_names,
                      const std::vector<std::string>& col_names, const Tensor<float>& m) {
  std::string text = "channel";
  for (const auto& c : col_names) text += "," + c;
  text += "\n";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    text += row_names[r];
    for (std::size_t c = 0; c < m.cols(); ++c) text += "," + num(m(r, c));
    text += "\n";
  }
  write_text(path, text);
}

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

RunResult cmd_eval(const RunOptions& options, std::ostream& log) {
  return evaluate_checkpoints(options, log, false);
}

RunResult cmd_zero_shot(const RunOptions& options, std::ostream& log) {
  return evaluate_checkpoints(options, log, true);
}

ExportResult cmd_export_attention(const ExportOptions& options, std::ostream& out) {
  auto cfg = resolve(options.config, options.overrides, nullptr, options.runtime, options.out);
  const fs::path dir = options.out;
  RunLog log(out, dir / "export_run.txt");
  auto ctx = load_context(cfg, log);

  auto container = Container::load(options.checkpoint);
  const std::size_t h = checkpoint_horizon(container);
  auto model = make_model<float>(cfg.model_config(h), ctx.backbone, ctx.principal, cfg.seed);
  restore_checkpoint(model, container);

  auto ds = load_dataset(options.dataset.empty() ? cfg.dataset : options.dataset, cfg);
  const std::size_t t = cfg.input_len;
  const std::size_t c = ds.cols();
  if (ds.rows() < t) {
    throw CapacityError("export needs at least " + std::to_string(t) + " rows, dataset has " +
                        std::to_string(ds.rows()));
  }
  const std::size_t start = options.start.value_or(ds.rows() - t);
  if (start + t > ds.rows()) {
    throw CapacityError("window starting at row " + std::to_string(start) + " runs past the end");
  }
  std::vector<double> window(ds.values.begin() + static_cast<std::ptrdiff_t>(start * c),
                             ds.values.begin() + static_cast<std::ptrdiff_t>((start + t) * c));
  if (cfg.train.norm == NormMode::instance) instance_normalize(window, c);
  std::vector<float> rows(c * t);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < t; ++i) rows[ch * t + i] = static_cast<float>(window[i * c + ch]);
  Tensor<float> series({c, t}, std::move(rows));

  NoGradGuard no_grad;
  const auto mc = model.config.match_config();
  auto x_time = mhsa(embed_series(series, model.match), model.match, mc, c);
  auto principal_map = word_relevance(x_time, model.principal.components, model.match, mc, c);
  write_matrix_csv(dir / "principal_attention.csv", ds.channels,
                   numbered("pc", model.principal.count()), principal_map);

  auto dual = forward_dual(model, series, c, true);
  const std::size_t layers = dual.time.features.size();
  const std::size_t pen = layers >= 2 ? layers - 2 : 0;
  const std::size_t width = model.backbone->config.width;
  write_matrix_csv(dir / "features_temporal.csv", ds.channels, numbered("f", width),
                   dual.time.features[pen]);
  write_matrix_csv(dir / "features_textual.csv", ds.channels, numbered("f", width),
                   dual.text.features[pen]);

  ExportResult result;
  result.channels = c;
  result.components = model.principal.count();
  if (options.words) {
    auto words = read_words(*options.words);
    std::vector<std::string> vocab;
    if (!cfg.vocab_path.empty()) vocab = read_words(cfg.vocab_path);
    WordEmbeddingDict<float> dict{model.backbone->token_embedding, vocab};
    std::vector<std::string> found;
    std::vector<float> vectors;
    for (const auto& w : words) {
      auto idx = dict.find(w);
      if (!idx || *idx >= dict.vocab_size()) {
        result.missing_words.push_back(w);
        continue;
      }
      found.push_back(w);
      auto row = dict.matrix.data().subspan(*idx * width, width);
      vectors.insert(vectors.end(), row.begin(), row.end());
    }
    if (!result.missing_words.empty()) {
      std::string list;
      for (const auto& w : result.missing_words) list += (list.empty() ? "" : ", ") + w;
      warn("words not in the vocabulary, skipped: " + list);
      std::string text;
      for (const auto& w : result.missing_words) text += w + "\n";
      write_text(dir / "missing_words.txt", text);
    }
    if (!found.empty()) {
      Tensor<float> keys({found.size(), width}, std::move(vectors));
      auto rel = word_relevance(x_time, keys, model.match, mc, c);
      write_matrix_csv(dir / "word_relevance.csv", ds.channels, found, rel);
    }
    result.words = found.size();
  }
  log.line("channels=" + std::to_string(c) + " components=" + std::to_string(result.components) +
           " words=" + std::to_string(result.words) +
           " missing_words=" + std::to_string(result.missing_words.size()) +
           " window_start=" + std::to_string(start));
  write_text(dir / "resolved_config.txt", cfg.to_text());
  return result;
}

}  // namespace calf::cli
