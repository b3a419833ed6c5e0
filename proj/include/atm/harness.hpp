#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "atm/attack.hpp"
#include "atm/backends.hpp"
#include "atm/toy_backend.hpp"

namespace atm {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kPromptTokenLimit = 77;
inline constexpr const char* kToolkitVersion = "0.1.0";

// Published full-scale reference results for the ATM attack, attached to
// report footers for context. Never used as test targets.
struct FullScaleReference {
  double short_success_pct = 91.1;
  double long_success_pct = 81.2;
  double short_ts = 0.72;
  double long_ts = 0.84;
  double long_fid = 29.65;
  double long_is_mean = 66.09;
  double long_is_std = 1.83;
};

// Corpus file: JSON Lines, one record per class. Keys: class_id, class_name,
// prompt (or template with a [CLASS_NAME] placeholder), noun_span = [begin,
// end] inclusive over whitespace tokens, mode = "replace" | "extend", k_prime.
std::vector<CorpusRecord> load_corpus(const std::string& path);

double text_similarity(const TokenSequence& clean, const TokenSequence& attack,
                       const TextEmbedder& embedder);

// (#classes with >= 1 success) / (#classes)
double success_rate(const std::map<int, std::vector<AttackRecord>>& by_class);

struct FidIsResult {
  double fid = 0.0;
  double is_mean = 0.0;
  double is_std = 0.0;
};

// Invokes an external scorer command as `cmd <image_dir> <reference_spec>` and
// parses fid / is_mean / is_std from its stdout (key=value lines or JSON).
// Empty command -> nullopt with a notice on the given stream.
std::optional<FidIsResult> fidis_hook(const std::string& adapter_cmd,
                                      const std::string& image_dir,
                                      const std::string& reference_spec,
                                      std::string* notice);
FidIsResult parse_fidis_output(const std::string& output);

struct ClassRow {
  int class_id = 0;
  std::string class_name;
  int candidates = 0;
  int successes = 0;
  double ts_mean = 0.0;
};

struct MetricsReport {
  double success_rate = 0.0;            // class-level (any of N)
  double candidate_success_rate = 0.0;  // fraction of all candidates
  double ts_mean = 0.0;
  std::optional<FidIsResult> fidis;
  std::vector<ClassRow> per_class;
  FullScaleReference reference;
};

MetricsReport build_report(const std::map<int, std::vector<AttackRecord>>& by_class,
                           const std::map<int, std::string>& class_names);

// Flat key-value configuration file: `key = value` lines, '#' comments.
class FlatConfig {
 public:
  static FlatConfig load(const std::string& path);
  static FlatConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  std::map<std::string, std::string> values_;
};

ToyBackendConfig toy_config_from(const FlatConfig& cfg);
SearchConfig search_config_from(const FlatConfig& cfg);
AttackConfig attack_config_from(const FlatConfig& cfg);

struct RunManifest {
  std::map<std::string, std::string> config;
  std::uint64_t global_seed = 0;
  std::string corpus_path;
  std::string backend_id;
  std::string start_time;
  std::string version = kToolkitVersion;
};

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

// Record persistence: JSONL, append-only, schema-versioned.
void append_record(const AttackRecord& rec, int class_id, std::ostream& out);
std::map<int, std::vector<AttackRecord>> load_records(const std::string& path);
void write_trace(const SearchTrace& trace, const std::string& path);

void write_report(const MetricsReport& report, const std::string& path);

// One successful attack prompt per line; returns the number of lines written.
int export_blackbox_prompts(const std::map<int, std::vector<AttackRecord>>& by_class,
                            const std::string& path, std::string* notice);

struct RunOutcome {
  MetricsReport report;
  std::map<int, std::vector<AttackRecord>> records;
};

// Full orchestration over a corpus: manifest first, then per-class search +
// attack, streaming persistence, then metrics.
RunOutcome run_corpus(const ToyBackend& backend, const SearchConfig& search_cfg,
                      const AttackConfig& attack_cfg, const std::string& out_dir,
                      const RunManifest& manifest,
                      const std::vector<int>* class_filter = nullptr,
                      bool baseline_instead = false);

}  // namespace atm
