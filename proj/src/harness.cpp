#include "atm/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "atm/png_io.hpp"

namespace atm {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<CorpusRecord> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<CorpusRecord> records;
  std::set<int> seen_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    auto fail = [&](const std::string& msg) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + msg);
    };
    CorpusRecord rec;
    if (!j.contains("class_id") || !j.contains("class_name")) fail("missing class_id/class_name");
    rec.class_id = j["class_id"].get<int>();
    rec.class_name = j["class_name"].get<std::string>();
    if (!seen_ids.insert(rec.class_id).second)
      fail("duplicate class_id " + std::to_string(rec.class_id));

    if (j.contains("template")) {
      std::string tmpl = j["template"].get<std::string>();
      auto pos = tmpl.find("[CLASS_NAME]");
      if (pos == std::string::npos) fail("template lacks [CLASS_NAME] placeholder");
      rec.prompt_text = tmpl.substr(0, pos) + rec.class_name + tmpl.substr(pos + 12);
      int before = static_cast<int>(split_words(tmpl.substr(0, pos)).size());
      int span = static_cast<int>(split_words(rec.class_name).size());
      if (span == 0) fail("class_name has no tokens");
      rec.noun_begin = before;
      rec.noun_end = before + span - 1;
    } else if (j.contains("prompt")) {
      rec.prompt_text = j["prompt"].get<std::string>();
      if (!j.contains("noun_span") || !j["noun_span"].is_array() || j["noun_span"].size() != 2)
        fail("prompt record needs noun_span = [begin, end]");
      rec.noun_begin = j["noun_span"][0].get<int>();
      rec.noun_end = j["noun_span"][1].get<int>();
    } else {
      fail("record needs either prompt or template");
    }

    int n_tokens = static_cast<int>(split_words(rec.prompt_text).size());
    if (n_tokens == 0) fail("prompt has no tokens");
    if (n_tokens > kPromptTokenLimit)
      fail("prompt exceeds the " + std::to_string(kPromptTokenLimit) + "-token limit (" +
           std::to_string(n_tokens) + " tokens)");
    if (rec.noun_begin < 0 || rec.noun_end < rec.noun_begin || rec.noun_end >= n_tokens)
      fail("noun_span outside prompt");

    std::string mode = j.value("mode", "replace");
    if (mode == "replace") {
      rec.mode = PerturbMode::Replace;
      rec.extend_count = 0;
    } else if (mode == "extend") {
      rec.mode = PerturbMode::Extend;
      rec.extend_count = j.value("k_prime", 4);
      if (rec.extend_count < 1) fail("extend mode needs k_prime >= 1");
    } else {
      fail("unknown mode: " + mode);
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw std::runtime_error("corpus is empty: " + path);
  return records;
}

double text_similarity(const TokenSequence& clean, const TokenSequence& attack,
                       const TextEmbedder& embedder) {
  if (clean.indices.empty() || attack.indices.empty())
    throw std::invalid_argument("text_similarity: empty input");
  Vector a = embedder.embed_text(clean);
  Vector b = embedder.embed_text(attack);
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double success_rate(const std::map<int, std::vector<AttackRecord>>& by_class) {
  if (by_class.empty()) throw std::invalid_argument("success_rate: no records");
  int hit = 0;
  for (const auto& [cid, records] : by_class) {
    if (records.empty()) throw std::invalid_argument("success_rate: class without records");
    for (const auto& r : records)
      if (r.success) {
        ++hit;
        break;
      }
  }
  return static_cast<double>(hit) / static_cast<double>(by_class.size());
}

FidIsResult parse_fidis_output(const std::string& output) {
  FidIsResult res;
  bool have_fid = false, have_mean = false, have_std = false;
  // try JSON first
  try {
    json j = json::parse(output);
    res.fid = j.at("fid").get<double>();
    res.is_mean = j.at("is_mean").get<double>();
    res.is_std = j.at("is_std").get<double>();
    return res;
  } catch (const json::exception&) {
    // fall through to key=value parsing
  }
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    double value = 0.0;
    try {
      value = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      continue;
    }
    if (key == "fid") res.fid = value, have_fid = true;
    if (key == "is_mean") res.is_mean = value, have_mean = true;
    if (key == "is_std") res.is_std = value, have_std = true;
  }
  if (!have_fid || !have_mean || !have_std)
    throw std::runtime_error("malformed scorer output:\n" + output);
  return res;
}

std::optional<FidIsResult> fidis_hook(const std::string& adapter_cmd,
                                      const std::string& image_dir,
                                      const std::string& reference_spec,
                                      std::string* notice) {
  if (adapter_cmd.empty()) {
    if (notice) *notice = "no FID/IS scorer adapter configured; fields omitted";
    return std::nullopt;
  }
  std::string cmd = adapter_cmd + " '" + image_dir + "' '" + reference_spec + "' 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("failed to start scorer adapter: " + adapter_cmd);
  std::string output;
  char buf[4096];
  while (size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
  int rc = pclose(pipe);
  if (rc != 0) throw std::runtime_error("scorer adapter failed:\n" + output);
  return parse_fidis_output(output);
}

MetricsReport build_report(const std::map<int, std::vector<AttackRecord>>& by_class,
                           const std::map<int, std::string>& class_names) {
  MetricsReport report;
  report.success_rate = success_rate(by_class);
  int total = 0, wins = 0;
  double ts_sum = 0.0;
  for (const auto& [cid, records] : by_class) {
    ClassRow row;
    row.class_id = cid;
    auto it = class_names.find(cid);
    if (it != class_names.end()) row.class_name = it->second;
    double class_ts = 0.0;
    for (const auto& r : records) {
      ++total;
      ++row.candidates;
      if (r.success) {
        ++wins;
        ++row.successes;
      }
      ts_sum += r.ts;
      class_ts += r.ts;
    }
    row.ts_mean = class_ts / static_cast<double>(row.candidates);
    report.per_class.push_back(std::move(row));
  }
  report.candidate_success_rate = static_cast<double>(wins) / static_cast<double>(total);
  report.ts_mean = ts_sum / static_cast<double>(total);
  return report;
}

// ---------------------------------------------------------------------------
// flat config

FlatConfig FlatConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

FlatConfig FlatConfig::from_string(const std::string& text) {
  FlatConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stod(it->second);
}

int FlatConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : std::stoi(it->second);
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config key " + key + ": expected true/false");
}

ToyBackendConfig toy_config_from(const FlatConfig& cfg) {
  ToyBackendConfig c;
  c.seed = static_cast<std::uint64_t>(cfg.get_int("backend.seed", 1));
  c.image_hw = cfg.get_int("backend.image_size", c.image_hw);
  c.embedding_dim = cfg.get_int("backend.embedding_dim", c.embedding_dim);
  c.hidden_dim = cfg.get_int("backend.hidden_dim", c.hidden_dim);
  c.t_diffusion = cfg.get_int("backend.t_diffusion", c.t_diffusion);
  c.filler_tokens = cfg.get_int("backend.filler_tokens", c.filler_tokens);
  c.outlier_tokens = cfg.get_int("backend.outlier_tokens", c.outlier_tokens);
  c.outlier_norm = cfg.get_double("backend.outlier_norm", c.outlier_norm);
  c.z_field_scale = cfg.get_double("backend.z_field_scale", c.z_field_scale);
  c.rate_min = cfg.get_double("backend.rate_min", c.rate_min);
  c.rate_max = cfg.get_double("backend.rate_max", c.rate_max);
  c.final_token_weight = cfg.get_double("backend.final_token_weight", c.final_token_weight);
  c.margin_target = cfg.get_double("backend.margin_target", c.margin_target);
  c.sampler_id = cfg.get_string("backend.sampler_id", c.sampler_id);
  return c;
}

SearchConfig search_config_from(const FlatConfig& cfg) {
  SearchConfig c;
  c.iterations = cfg.get_int("search.iterations", c.iterations);
  c.eta = cfg.get_double("search.eta", c.eta);
  c.noise_samples_per_step = cfg.get_int("search.noise_samples", c.noise_samples_per_step);
  c.temperature.tau_start = cfg.get_double("search.tau_start", c.temperature.tau_start);
  c.temperature.tau_end = cfg.get_double("search.tau_end", c.temperature.tau_end);
  c.temperature.mode = cfg.get_string("search.tau_mode", "geometric") == "constant"
                           ? TemperatureSchedule::Mode::Constant
                           : TemperatureSchedule::Mode::Geometric;
  c.weights.lambda = cfg.get_double("search.lambda", c.weights.lambda);
  c.weights.gamma = cfg.get_double("search.gamma", c.weights.gamma);
  c.margin.kappa = cfg.get_double("search.kappa", c.margin.kappa);
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  c.with_noise = cfg.get_bool("search.with_noise", c.with_noise);
  return c;
}

AttackConfig attack_config_from(const FlatConfig& cfg) {
  AttackConfig c;
  c.candidates = cfg.get_int("attack.candidates", c.candidates);
  c.tau = cfg.get_double("attack.tau", c.tau);
  if (cfg.has("attack.ts_floor")) c.ts_floor = cfg.get_double("attack.ts_floor", 0.0);
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  return c;
}

// ---------------------------------------------------------------------------
// persistence

void write_manifest(const RunManifest& manifest, const std::string& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["version"] = manifest.version;
  j["global_seed"] = manifest.global_seed;
  j["corpus_path"] = manifest.corpus_path;
  j["backend_id"] = manifest.backend_id;
  j["start_time"] = manifest.start_time;
  j["config"] = manifest.config;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  json j = json::parse(in);
  int schema = j.value("schema_version", 0);
  if (schema != kSchemaVersion)
    std::fprintf(stderr, "warning: manifest schema version %d, expected %d\n", schema,
                 kSchemaVersion);
  RunManifest m;
  m.version = j.value("version", "");
  m.global_seed = j.value("global_seed", 0ULL);
  m.corpus_path = j.value("corpus_path", "");
  m.backend_id = j.value("backend_id", "");
  m.start_time = j.value("start_time", "");
  if (j.contains("config"))
    m.config = j["config"].get<std::map<std::string, std::string>>();
  return m;
}

void append_record(const AttackRecord& rec, int class_id, std::ostream& out) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["class_id"] = class_id;
  j["prompt_tokens"] = rec.prompt_tokens.indices;
  j["prompt_text"] = rec.prompt_text;
  j["image_ref"] = rec.image_ref;
  j["predicted_class"] = rec.predicted_class;
  j["success"] = rec.success;
  j["filtered"] = rec.filtered;
  j["margin"] = rec.margin;
  j["fluency"] = rec.fluency;
  j["bert"] = rec.bert;
  j["ts"] = rec.ts;
  j["seed_used"] = rec.seed_used;
  out << j.dump() << '\n';
}

std::map<int, std::vector<AttackRecord>> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records: " + path);
  std::map<int, std::vector<AttackRecord>> by_class;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    AttackRecord rec;
    rec.prompt_tokens.indices = j["prompt_tokens"].get<std::vector<int>>();
    rec.prompt_text = j["prompt_text"].get<std::string>();
    rec.prompt_tokens.text = rec.prompt_text;
    rec.image_ref = j["image_ref"].get<std::string>();
    rec.predicted_class = j["predicted_class"].get<int>();
    rec.success = j["success"].get<bool>();
    rec.filtered = j.value("filtered", false);
    rec.margin = j["margin"].get<double>();
    rec.fluency = j["fluency"].get<double>();
    rec.bert = j["bert"].get<double>();
    rec.ts = j["ts"].get<double>();
    rec.seed_used = j.value("seed_used", 0ULL);
    by_class[j["class_id"].get<int>()].push_back(std::move(rec));
  }
  return by_class;
}

void write_trace(const SearchTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  for (const auto& s : trace.steps) {
    json j;
    j["total"] = s.total;
    j["margin"] = s.margin;
    j["fluency"] = s.fluency;
    j["bert"] = s.bert;
    j["tau"] = s.tau;
    j["decoded"] = s.decoded;
    out << j.dump() << '\n';
  }
}

void write_report(const MetricsReport& report, const std::string& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["success_rate"] = report.success_rate;
  j["candidate_success_rate"] = report.candidate_success_rate;
  j["ts_mean"] = report.ts_mean;
  if (report.fidis) {
    j["fid"] = report.fidis->fid;
    j["is_mean"] = report.fidis->is_mean;
    j["is_std"] = report.fidis->is_std;
  }
  json rows = json::array();
  for (const auto& r : report.per_class) {
    rows.push_back({{"class_id", r.class_id},
                    {"class_name", r.class_name},
                    {"candidates", r.candidates},
                    {"successes", r.successes},
                    {"ts_mean", r.ts_mean}});
  }
  j["per_class"] = rows;
  j["full_scale_reference"] = {
      {"source", "published full-scale ATM results (1,000 ImageNet classes, Stable Diffusion)"},
      {"short_success_pct", report.reference.short_success_pct},
      {"long_success_pct", report.reference.long_success_pct},
      {"short_ts", report.reference.short_ts},
      {"long_ts", report.reference.long_ts},
      {"long_fid", report.reference.long_fid},
      {"long_is_mean", report.reference.long_is_mean},
      {"long_is_std", report.reference.long_is_std},
      {"note", "context only, never a test target at desk scale"}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

int export_blackbox_prompts(const std::map<int, std::vector<AttackRecord>>& by_class,
                            const std::string& path, std::string* notice) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  int lines = 0;
  for (const auto& [cid, records] : by_class)
    for (const auto& r : records)
      if (r.success) {
        out << r.prompt_text << '\n';
        ++lines;
      }
  if (lines == 0 && notice) *notice = "no successful attack prompts; wrote an empty file";
  return lines;
}

RunOutcome run_corpus(const ToyBackend& backend, const SearchConfig& search_cfg,
                      const AttackConfig& attack_cfg, const std::string& out_dir,
                      const RunManifest& manifest,
                      const std::vector<int>* class_filter, bool baseline_instead) {
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/images");
  write_manifest(manifest, out_dir + "/manifest.json");

  std::ofstream records_out(out_dir + "/records.jsonl");
  if (!records_out) throw std::runtime_error("cannot write records in " + out_dir);

  RunOutcome outcome;
  std::map<int, std::string> names;
  for (const auto& spec : backend.specs) {
    if (class_filter && std::find(class_filter->begin(), class_filter->end(), spec.class_id) ==
                            class_filter->end())
      continue;
    names[spec.class_id] = spec.class_name;

    std::vector<AttackRecord> records;
    if (baseline_instead) {
      Rng rng = derive_rng(attack_cfg.seed, static_cast<std::uint64_t>(spec.class_id),
                           "random-baseline");
      records = random_baseline(spec, backend.bundle, attack_cfg, rng);
    } else {
      AtmResult result = run_atm(spec, backend.bundle, search_cfg, attack_cfg);
      write_trace(result.trace,
                  out_dir + "/trace_" + std::to_string(spec.class_id) + ".jsonl");
      records = std::move(result.records);
    }
    for (size_t n = 0; n < records.size(); ++n) {
      auto& rec = records[n];
      rec.image_ref = "images/c" + std::to_string(spec.class_id) + "_n" + std::to_string(n) +
                      ".png";
      write_png(rec.image, out_dir + "/" + rec.image_ref);
      append_record(rec, spec.class_id, records_out);
      records_out.flush();  // append-only stream, valid prefix on crash
    }
    outcome.records[spec.class_id] = std::move(records);
  }
  outcome.report = build_report(outcome.records, names);
  write_report(outcome.report, out_dir + "/report.json");
  return outcome;
}

}  // namespace atm
