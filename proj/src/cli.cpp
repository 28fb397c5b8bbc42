#include "spectralseg/cli.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spectralseg/checkpoint.hpp"
#include "spectralseg/report.hpp"
#include "spectralseg/train.hpp"

namespace fs = std::filesystem;

namespace spectralseg {

namespace {

const char* kUsage =
    "usage: spectralseg <subcommand> [--config FILE] [--key=value ...]\n"
    "\n"
    "subcommands:\n"
    "  synth         generate the synthetic layered-speckle corpus\n"
    "  convert       convert the raw OCT subject files into the PNG corpus\n"
    "  train         train a model on a corpus manifest\n"
    "  eval          evaluate a checkpoint on a split\n"
    "  ablate-alpha  alpha sweep plus the conv-branch row (table2 report)\n"
    "  ablate-freq   frequency-range sweep (table3 report)\n"
    "  audit         finite-difference gradient audit on a tiny model\n"
    "  report        render tables from run.json files (+ literature rows)\n"
    "  overlay       render input | ground truth | prediction panels\n"
    "\n"
    "config: flat JSON with dotted keys; --key=value overrides win.\n"
    "SPECTRALSEG_DATA provides the default data root for data.manifest.\n";

std::map<std::string, std::string> default_config() {
  return {
      {"model.variant", "ynet"},
      {"model.num_classes", "9"},
      {"model.base_width", "32"},
      {"model.alpha", "0.5"},
      {"model.filter.mode", "none"},
      {"model.filter.bound", "10"},
      {"model.input_h", "224"},
      {"model.input_w", "224"},
      {"train.batch_size", "10"},
      {"train.learning_rate", "5e-4"},
      {"train.weight_decay", "1e-4"},
      {"train.max_epochs", "80"},
      {"train.optimizer", "adam"},
      {"train.seed", "0"},
      {"train.lambda_dice", "1"},
      {"train.lambda_ce", "1"},
      {"train.dice_epsilon", "1e-6"},
      {"train.checkpoint_dir", ""},
      {"data.manifest", ""},
      {"data.raw_dir", ""},
      {"data.out_dir", ""},
      {"data.n", "200"},
      {"data.seed", "1"},
      {"data.split", "test"},
      {"ablate.alphas", "0,0.25,0.5,0.75,1"},
      {"ablate.freq_bound", "10"},
      {"report.runs", ""},
      {"report.style", "table1"},
      {"report.literature", ""},
      {"out.dir", "out"},
      {"out.checkpoint", ""},
      {"overlay.record", "0"},
  };
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a = {
      {"variant", "model.variant"},       {"base_width", "model.base_width"},
      {"num_classes", "model.num_classes"}, {"alpha", "model.alpha"},
      {"batch_size", "train.batch_size"}, {"learning_rate", "train.learning_rate"},
      {"weight_decay", "train.weight_decay"}, {"max_epochs", "train.max_epochs"},
      {"epochs", "train.max_epochs"},     {"seed", "train.seed"},
      {"manifest", "data.manifest"},      {"checkpoint", "out.checkpoint"},
      {"n", "data.n"},
  };
  return a;
}

struct Resolved {
  std::map<std::string, std::string> kv;
  std::set<std::string> explicit_keys;

  const std::string& str(const std::string& k) const { return kv.at(k); }
  int i(const std::string& k) const { return std::stoi(kv.at(k)); }
  double d(const std::string& k) const { return std::stod(kv.at(k)); }
  std::uint64_t u64(const std::string& k) const { return std::stoull(kv.at(k)); }
  bool is_explicit(const std::string& k) const { return explicit_keys.count(k) > 0; }
};

void set_key(Resolved& r, const std::string& raw_key, const std::string& value) {
  std::string key = raw_key;
  auto al = aliases().find(key);
  if (al != aliases().end()) key = al->second;
  if (r.kv.find(key) == r.kv.end()) {
    throw std::invalid_argument("unknown configuration key '" + raw_key + "'");
  }
  r.kv[key] = value;
  r.explicit_keys.insert(key);
}

Resolved resolve_config(const std::vector<std::string>& args, size_t first) {
  Resolved r;
  r.kv = default_config();

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  for (size_t i = first; i < args.size(); ++i) {
    std::string a = args[i];
    if (a == "--config" || a == "-c") {
      if (i + 1 >= args.size()) throw std::invalid_argument("--config needs a path");
      config_path = args[++i];
      continue;
    }
    if (a.rfind("--config=", 0) == 0) {
      config_path = a.substr(9);
      continue;
    }
    if (a.rfind("--", 0) == 0) a = a.substr(2);
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + args[i] + "'");
    overrides.emplace_back(a.substr(0, eq), a.substr(eq + 1));
  }

  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::invalid_argument("cannot open config file: " + config_path);
    nlohmann::json j;
    in >> j;
    if (!j.is_object()) throw std::invalid_argument("config file must hold a flat JSON object");
    for (const auto& [k, v] : j.items()) {
      set_key(r, k, v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  for (const auto& [k, v] : overrides) set_key(r, k, v);

  // environment-provided default data root
  if (r.str("data.manifest").empty()) {
    if (const char* root = std::getenv("SPECTRALSEG_DATA")) {
      r.kv["data.manifest"] = (fs::path(root) / "manifest.json").string();
    }
  }
  return r;
}

void log_resolved(const Resolved& r, const std::string& cmd) {
  std::fprintf(stderr, "[spectralseg] %s with resolved config:\n", cmd.c_str());
  for (const auto& [k, v] : r.kv) std::fprintf(stderr, "  %s = %s\n", k.c_str(), v.c_str());
}

ModelConfig model_config_from(const Resolved& r) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(r.str("model.variant"));
  cfg.num_classes = r.i("model.num_classes");
  cfg.base_width = r.i("model.base_width");
  cfg.alpha = r.d("model.alpha");
  cfg.filter.mode = filter_mode_from_string(r.str("model.filter.mode"));
  cfg.filter.bound = r.d("model.filter.bound");
  cfg.input_h = r.i("model.input_h");
  cfg.input_w = r.i("model.input_w");
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from(const Resolved& r, const std::string& default_ckpt_dir) {
  TrainConfig cfg;
  cfg.batch_size = r.i("train.batch_size");
  cfg.learning_rate = r.d("train.learning_rate");
  cfg.weight_decay = r.d("train.weight_decay");
  cfg.max_epochs = r.i("train.max_epochs");
  cfg.optimizer = r.str("train.optimizer");
  cfg.seed = r.u64("train.seed");
  cfg.loss.lambda_dice = r.d("train.lambda_dice");
  cfg.loss.lambda_ce = r.d("train.lambda_ce");
  cfg.loss.epsilon = r.d("train.dice_epsilon");
  cfg.checkpoint_dir = r.str("train.checkpoint_dir").empty() ? default_ckpt_dir : r.str("train.checkpoint_dir");
  cfg.validate();
  return cfg;
}

std::string require(const Resolved& r, const std::string& key, const char* why) {
  const std::string& v = r.str(key);
  if (v.empty()) throw std::invalid_argument(std::string("missing required key '") + key + "' (" + why + ")");
  return v;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

std::vector<std::string> parse_string_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

void print_report_line(const EvalReport& rep) {
  std::printf("  %-9s %s\n", "class", "dice");
  for (int k = 0; k < kNumForeground; ++k) {
    std::printf("  %-9s %.3f  (on %d scan(s))\n", kClassNames[static_cast<size_t>(k)].c_str(),
                rep.per_class_dice[static_cast<size_t>(k)], rep.class_scan_counts[static_cast<size_t>(k)]);
  }
  std::printf("  mean dice %.4f   mean IoU %.4f   scans %d\n", rep.mean_dice, rep.mean_iou, rep.num_scans);
}

int cmd_synth(const Resolved& r) {
  const std::string out = require(r, "data.out_dir", "directory for the generated corpus");
  const DatasetManifest m = generate_synthetic(r.u64("data.seed"), r.i("data.n"), out);
  std::printf("wrote %zu scans to %s (manifest.json alongside)\n", m.records.size(), out.c_str());
  return 0;
}

int cmd_convert(const Resolved& r) {
  const std::string raw = require(r, "data.raw_dir", "directory with Subject_XX.mat files");
  const std::string out = require(r, "data.out_dir", "directory for the converted corpus");
  const DatasetManifest m = ingest_duke(raw, out);
  std::printf("converted %zu annotated scans into %s\n", m.records.size(), out.c_str());
  return 0;
}

int cmd_train(const Resolved& r) {
  const std::string manifest = require(r, "data.manifest", "corpus manifest path; set SPECTRALSEG_DATA or data.manifest");
  const DatasetManifest data = DatasetManifest::load(manifest);
  const ModelConfig mcfg = model_config_from(r);
  const TrainConfig tcfg = train_config_from(r, (fs::path(r.str("out.dir")) / "train").string());
  const RunRecord rec = train(mcfg, data, tcfg);
  std::printf("best epoch %d (val mean dice %.4f)\n", rec.best_epoch,
              rec.best_epoch >= 0 ? rec.val_mean_dice[static_cast<size_t>(rec.best_epoch)] : 0.0);
  std::printf("test split report:\n");
  print_report_line(rec.eval);
  std::printf("checkpoint: %s\n", rec.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const Resolved& r) {
  const std::string ckpt = require(r, "out.checkpoint", "checkpoint to evaluate");
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
  const std::string manifest = require(r, "data.manifest", "corpus manifest path");
  SegmentationModel model = load_checkpoint(ckpt);
  const DatasetManifest data = DatasetManifest::load(manifest);
  const EvalReport rep = evaluate_dataset(model, data, r.str("data.split"));
  print_report_line(rep);
  fs::create_directories(r.str("out.dir"));
  const auto entry = entry_from_report(to_string(model.config().variant), rep);
  emit_tables({entry}, TableStyle::table1, (fs::path(r.str("out.dir")) / "eval.csv").string(),
              (fs::path(r.str("out.dir")) / "eval.md").string());
  return 0;
}

TableEntry entry_from_row(const AblationRow& row) {
  TableEntry e = entry_from_report(row.label, row.run.eval);
  return e;
}

int cmd_ablate_alpha(const Resolved& r) {
  const std::string manifest = require(r, "data.manifest", "corpus manifest path");
  const DatasetManifest data = DatasetManifest::load(manifest);
  ModelConfig mcfg = model_config_from(r);
  TrainConfig tcfg = train_config_from(r, (fs::path(r.str("out.dir")) / "ablate-alpha").string());
  const auto rows = run_alpha_ablation(parse_double_list(r.str("ablate.alphas")), mcfg, data, tcfg);

  std::vector<TableEntry> entries;
  int failed = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      ++failed;
      std::fprintf(stderr, "row '%s' failed: %s\n", row.label.c_str(), row.error.c_str());
      continue;
    }
    TableEntry e = entry_from_row(row);
    if (row.model_cfg.variant == Variant::ynet_conv_branch) {
      e.ffc_flag = "-";
      e.alpha = "-";
    } else {
      e.ffc_flag = "yes";
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%g", row.model_cfg.alpha);
      e.alpha = buf;
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("alpha ablation: every row failed");
  fs::create_directories(r.str("out.dir"));
  emit_tables(entries, TableStyle::table2, (fs::path(r.str("out.dir")) / "table2.csv").string(),
              (fs::path(r.str("out.dir")) / "table2.md").string());
  std::printf("alpha ablation: %zu rows (%d failed), tables in %s\n", entries.size(), failed,
              r.str("out.dir").c_str());
  return 0;
}

int cmd_ablate_freq(const Resolved& r) {
  const std::string manifest = require(r, "data.manifest", "corpus manifest path");
  const DatasetManifest data = DatasetManifest::load(manifest);
  ModelConfig mcfg = model_config_from(r);
  TrainConfig tcfg = train_config_from(r, (fs::path(r.str("out.dir")) / "ablate-freq").string());
  const double bound = r.d("ablate.freq_bound");
  const std::vector<FrequencyFilterSpec> specs = {{FilterMode::none, 0.0},
                                                  {FilterMode::keep, bound},
                                                  {FilterMode::remove, bound}};
  const auto rows = run_frequency_ablation(specs, mcfg, data, tcfg);

  std::vector<TableEntry> entries;
  int failed = 0;
  const char* labels[3] = {"No change", "keep(-10,10)", "remove(-10,10)"};
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].ok) {
      ++failed;
      std::fprintf(stderr, "row '%s' failed: %s\n", rows[i].label.c_str(), rows[i].error.c_str());
      continue;
    }
    TableEntry e = entry_from_report(i < 3 ? labels[i] : rows[i].label, rows[i].run.eval);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("frequency ablation: every row failed");
  fs::create_directories(r.str("out.dir"));
  emit_tables(entries, TableStyle::table3, (fs::path(r.str("out.dir")) / "table3.csv").string(),
              (fs::path(r.str("out.dir")) / "table3.md").string());
  std::printf("frequency ablation: %zu rows (%d failed), tables in %s\n", entries.size(), failed,
              r.str("out.dir").c_str());
  return 0;
}

int cmd_audit(const Resolved& r) {
  ModelConfig mcfg = model_config_from(r);
  if (!r.is_explicit("model.base_width")) mcfg.base_width = 4;
  if (!r.is_explicit("model.input_h")) mcfg.input_h = 32;
  if (!r.is_explicit("model.input_w")) mcfg.input_w = 32;
  mcfg.validate();
  const AuditReport rep = gradient_audit(mcfg, r.u64("train.seed") + 7);
  for (const auto& l : rep.layers) {
    std::printf("  %-52s max rel err %.3e\n", l.param.c_str(), l.max_rel_err);
  }
  std::printf("audit %s: max rel err %.3e (%s)\n", rep.pass ? "PASS" : "FAIL", rep.max_rel_err,
              rep.worst_param.c_str());
  if (!rep.pass) throw std::runtime_error("gradient audit failed at " + rep.worst_param);
  return 0;
}

int cmd_report(const Resolved& r) {
  const std::string runs = require(r, "report.runs", "comma-separated run.json paths");
  const std::string style_s = r.str("report.style");
  TableStyle style;
  if (style_s == "table1") style = TableStyle::table1;
  else if (style_s == "table2") style = TableStyle::table2;
  else if (style_s == "table3") style = TableStyle::table3;
  else throw std::invalid_argument("report.style must be table1|table2|table3");

  std::vector<TableEntry> entries;
  if (style == TableStyle::table1 && !r.str("report.literature").empty()) {
    for (auto& e : load_literature_rows(r.str("report.literature"))) entries.push_back(std::move(e));
  }
  for (const auto& path : parse_string_list(runs)) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open run record: " + path);
    nlohmann::json j;
    in >> j;
    EvalReport rep;
    const auto& ev = j.at("eval");
    for (int k = 0; k < kNumForeground; ++k) {
      rep.per_class_dice[static_cast<size_t>(k)] =
          ev.at("per_class_dice").at(kClassNames[static_cast<size_t>(k)]).get<double>();
    }
    rep.mean_dice = ev.at("mean_dice").get<double>();
    TableEntry e = entry_from_report(j.at("model").at("variant").get<std::string>(), rep);
    if (style == TableStyle::table2) {
      const std::string variant = j.at("model").at("variant").get<std::string>();
      e.ffc_flag = variant == "ynet" ? "yes" : "-";
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%g", j.at("model").at("alpha").get<double>());
      e.alpha = variant == "ynet" ? buf : "-";
    }
    entries.push_back(std::move(e));
  }
  fs::create_directories(r.str("out.dir"));
  const std::string base = (fs::path(r.str("out.dir")) / style_s).string();
  emit_tables(entries, style, base + ".csv", base + ".md");
  std::printf("wrote %s.csv and %s.md\n", base.c_str(), base.c_str());
  return 0;
}

int cmd_overlay(const Resolved& r) {
  const std::string ckpt = require(r, "out.checkpoint", "checkpoint to visualize");
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
  const std::string manifest = require(r, "data.manifest", "corpus manifest path");
  SegmentationModel model = load_checkpoint(ckpt);
  const DatasetManifest data = DatasetManifest::load(manifest);
  const int idx = r.i("overlay.record");
  if (idx < 0 || idx >= static_cast<int>(data.records.size())) {
    throw std::invalid_argument("overlay.record out of range (corpus has " + std::to_string(data.records.size()) +
                                " records)");
  }
  fs::create_directories(r.str("out.dir"));
  char name[64];
  std::snprintf(name, sizeof(name), "overlay_%04d.png", idx);
  const std::string out = (fs::path(r.str("out.dir")) / name).string();
  emit_overlay(model, load_record(data, idx), out);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  if (args.empty() || args[0] == "-h" || args[0] == "--help" || args[0] == "help") {
    std::fputs(kUsage, stderr);
    return args.empty() ? 1 : 0;
  }
  const std::string cmd = args[0];
  try {
    const Resolved r = resolve_config(args, 1);
    log_resolved(r, cmd);
    if (cmd == "synth") return cmd_synth(r);
    if (cmd == "convert") return cmd_convert(r);
    if (cmd == "train") return cmd_train(r);
    if (cmd == "eval") return cmd_eval(r);
    if (cmd == "ablate-alpha") return cmd_ablate_alpha(r);
    if (cmd == "ablate-freq") return cmd_ablate_freq(r);
    if (cmd == "audit") return cmd_audit(r);
    if (cmd == "report") return cmd_report(r);
    if (cmd == "overlay") return cmd_overlay(r);
    std::fprintf(stderr, "unknown subcommand '%s'\n\n%s", cmd.c_str(), kUsage);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
}

}  // namespace spectralseg
