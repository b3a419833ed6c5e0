// Command-line front end for the toy-scale adversarial text-to-image toolkit.
// Every run is pinned by a flat config file plus a global seed; outputs are a
// manifest, JSONL records, PNG images, and JSON reports.

#include <CLI11.hpp>

#include <array>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "atm/analysis.hpp"
#include "atm/attack.hpp"
#include "atm/harness.hpp"
#include "atm/png_io.hpp"
#include "atm/toy_backend.hpp"

using namespace atm;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string corpus_path;
  std::string config_path;
  int seed = -1;  // overrides the config seed when >= 0
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--corpus", opts.corpus_path, "corpus JSONL path")->required();
  cmd->add_option("--config", opts.config_path, "flat key=value config file");
  cmd->add_option("--seed", opts.seed, "global seed override");
}

FlatConfig load_config(const CommonOpts& opts) {
  FlatConfig cfg =
      opts.config_path.empty() ? FlatConfig{} : FlatConfig::load(opts.config_path);
  if (opts.seed >= 0) cfg.set("seed", std::to_string(opts.seed));
  return cfg;
}

ToyBackend build_backend(const CommonOpts& opts, const FlatConfig& cfg) {
  return toy_calibrate(load_corpus(opts.corpus_path), toy_config_from(cfg));
}

std::string timestamp() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

RunManifest make_manifest(const CommonOpts& opts, const FlatConfig& cfg) {
  RunManifest m;
  m.config = cfg.values();
  m.global_seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  m.corpus_path = opts.corpus_path;
  m.backend_id = "toy";
  m.start_time = timestamp();
  return m;
}

Matrix prompt_embedding(const ToyBackend& b, const TokenSequence& seq) {
  return embed_tokens(b.bundle.embedding_table, seq);
}

int cmd_run(const CommonOpts& opts, const std::string& out_dir,
            const std::vector<int>& classes, bool baseline, const std::string& blackbox,
            const std::string& fidis_cmd, const std::string& fidis_ref) {
  FlatConfig cfg = load_config(opts);
  ToyBackend backend = build_backend(opts, cfg);
  SearchConfig scfg = search_config_from(cfg);
  AttackConfig acfg = attack_config_from(cfg);
  RunManifest manifest = make_manifest(opts, cfg);

  const std::vector<int>* filter = classes.empty() ? nullptr : &classes;
  RunOutcome outcome =
      run_corpus(backend, scfg, acfg, out_dir, manifest, filter, baseline);

  if (!fidis_cmd.empty()) {
    std::string notice;
    auto fidis = fidis_hook(fidis_cmd, out_dir + "/images", fidis_ref, &notice);
    if (!notice.empty()) std::cerr << notice << "\n";
    outcome.report.fidis = fidis;
    write_report(outcome.report, out_dir + "/report.json");
  }
  if (!blackbox.empty()) {
    std::string notice;
    int lines = export_blackbox_prompts(outcome.records, blackbox, &notice);
    if (!notice.empty()) std::cerr << notice << "\n";
    std::cout << "wrote " << lines << " attack prompt(s) to " << blackbox << "\n";
  }

  std::printf("%s: class success %.3f, candidate success %.3f, mean ts %.3f\n",
              baseline ? "baseline" : "attack", outcome.report.success_rate,
              outcome.report.candidate_success_rate, outcome.report.ts_mean);
  for (const auto& row : outcome.report.per_class)
    std::printf("  class %2d %-12s %d/%d\n", row.class_id, row.class_name.c_str(),
                row.successes, row.candidates);
  return 0;
}

int cmd_speed(const CommonOpts& opts, const std::string& out_csv, int window) {
  FlatConfig cfg = load_config(opts);
  ToyBackend backend = build_backend(opts, cfg);
  SsimParams p;
  p.window = window;
  auto rows = speed_population(backend.specs, backend.bundle, backend.z_ref, p);
  write_speed_csv(rows, out_csv);

  auto* gen = dynamic_cast<const ToyGenerator*>(backend.bundle.generator.get());
  if (gen) {
    int fast = 0, slow = 0;
    double rmax = -1.0, rmin = 2.0;
    for (size_t c = 0; c < backend.specs.size(); ++c) {
      double r = gen->convergence_rate(prompt_embedding(backend, backend.specs[c].clean));
      if (r > rmax) {
        rmax = r;
        fast = static_cast<int>(c);
      }
      if (r < rmin) {
        rmin = r;
        slow = static_cast<int>(c);
      }
    }
    std::printf("fastest class %d (%s, rate %.3f), slowest class %d (%s, rate %.3f)\n",
                fast, backend.specs[static_cast<size_t>(fast)].class_name.c_str(), rmax,
                slow, backend.specs[static_cast<size_t>(slow)].class_name.c_str(), rmin);
  }
  std::cout << "wrote per-step similarity distribution to " << out_csv << "\n";
  return 0;
}

int cmd_entangle(const CommonOpts& opts, int class_a, int class_b, double branch_fraction,
                 double sigma, int window, const std::string& image_dir) {
  FlatConfig cfg = load_config(opts);
  ToyBackend backend = build_backend(opts, cfg);
  int n = static_cast<int>(backend.specs.size());
  if (class_a < 0 || class_a >= n || class_b < 0 || class_b >= n)
    throw CLI::ValidationError("--class-a/--class-b out of range");

  EntanglementProbeConfig pcfg;
  pcfg.t_branch_fraction = branch_fraction;
  pcfg.sigma = sigma;
  SsimParams p;
  p.window = window;
  EntanglementReport rep = entanglement_probe(
      prompt_embedding(backend, backend.specs[static_cast<size_t>(class_a)].clean),
      prompt_embedding(backend, backend.specs[static_cast<size_t>(class_b)].clean),
      backend.bundle, backend.z_ref, pcfg, p);

  std::printf("branch at t=%d, outline distance %.4f, entangled: %s\n", rep.t_branch,
              rep.outline_distance, rep.entangled ? "yes" : "no");
  if (!image_dir.empty()) {
    fs::create_directories(image_dir);
    write_png(rep.pure_a, image_dir + "/pure_a.png");
    write_png(rep.pure_b, image_dir + "/pure_b.png");
    write_png(rep.branched, image_dir + "/branched.png");
    std::cout << "wrote pure_a.png, pure_b.png, branched.png to " << image_dir << "\n";
  }
  return 0;
}

int cmd_positions(const CommonOpts& opts, const std::vector<std::string>& words) {
  FlatConfig cfg = load_config(opts);
  ToyBackend backend = build_backend(opts, cfg);
  std::array<std::string, 3> triple = {words[0], words[1], words[2]};
  auto records = positioning_permutations(triple, backend.bundle, backend.z_ref);
  for (const auto& rec : records) {
    std::string name = rec.predicted_class >= 0 &&
                               rec.predicted_class < static_cast<int>(backend.specs.size())
                           ? backend.specs[static_cast<size_t>(rec.predicted_class)].class_name
                           : "?";
    std::printf("%-40s -> class %2d (%s)\n", rec.prompt_text.c_str(), rec.predicted_class,
                name.c_str());
  }
  return 0;
}

int cmd_polysemy(const CommonOpts& opts, const std::vector<int>& classes, int per_set,
                 const std::string& out_csv) {
  FlatConfig cfg = load_config(opts);
  ToyBackend backend = build_backend(opts, cfg);
  Rng rng = derive_rng(static_cast<std::uint64_t>(cfg.get_int("seed", 0)), 0, "polysemy");

  std::vector<std::pair<std::string, std::vector<ImageArray>>> sets;
  for (int cid : classes) {
    if (cid < 0 || cid >= static_cast<int>(backend.specs.size()))
      throw CLI::ValidationError("--classes entry out of range");
    const PromptSpec& spec = backend.specs[static_cast<size_t>(cid)];
    std::vector<ImageArray> images;
    for (int i = 0; i < per_set; ++i) {
      Vector z(backend.bundle.generator->latent_size());
      for (int k = 0; k < z.size(); ++k) z[k] = rng.normal();
      images.push_back(
          backend.bundle.generator->generate(z, prompt_embedding(backend, spec.clean)));
    }
    sets.emplace_back(spec.class_name, std::move(images));
  }

  const TokenSequence& text = backend.specs[static_cast<size_t>(classes.front())].clean;
  PolysemyExport exp = polysemy_export(sets, text, backend.bundle);
  write_cosine_csv(exp, out_csv);
  for (const auto& [name, cosines] : exp.set_to_text) {
    double sum = 0.0;
    for (double c : cosines) sum += c;
    std::printf("set %-12s mean cosine to text %.4f over %zu image(s)\n", name.c_str(),
                sum / static_cast<double>(cosines.size()), cosines.size());
  }
  std::cout << "wrote pairwise cosine matrix to " << out_csv << "\n";
  return 0;
}

int cmd_report(const std::string& records_path, const std::string& corpus_path,
               const std::string& out_path) {
  auto by_class = load_records(records_path);
  std::map<int, std::string> names;
  if (!corpus_path.empty())
    for (const auto& rec : load_corpus(corpus_path)) names[rec.class_id] = rec.class_name;
  MetricsReport report = build_report(by_class, names);
  if (!out_path.empty()) write_report(report, out_path);
  std::printf("class success %.3f, candidate success %.3f, mean ts %.3f over %zu class(es)\n",
              report.success_rate, report.candidate_success_rate, report.ts_mean,
              report.per_class.size());
  return 0;
}

int cmd_export(const std::string& records_path, const std::string& out_path) {
  auto by_class = load_records(records_path);
  std::string notice;
  int lines = export_blackbox_prompts(by_class, out_path, &notice);
  if (!notice.empty()) std::cerr << notice << "\n";
  std::cout << "wrote " << lines << " attack prompt(s) to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-based adversarial prompt toolkit (toy backend)"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  std::string run_out, run_blackbox, run_fidis_cmd, run_fidis_ref = "reference";
  std::vector<int> run_classes;
  bool run_baseline = false;
  auto* run = app.add_subcommand("run", "search + attack over a corpus");
  add_common(run, run_opts);
  run->add_option("--out-dir", run_out, "output directory")->required();
  run->add_option("--classes", run_classes, "restrict to these class ids");
  run->add_flag("--baseline", run_baseline, "random-replacement baseline instead of search");
  run->add_option("--blackbox-out", run_blackbox, "also export successful prompts, one per line");
  run->add_option("--fidis-cmd", run_fidis_cmd, "external FID/IS scorer command");
  run->add_option("--fidis-ref", run_fidis_ref, "reference spec passed to the scorer");

  CommonOpts speed_opts;
  std::string speed_out = "speed.csv";
  int speed_window = 7;
  auto* speed = app.add_subcommand("speed", "per-step generation-speed distribution");
  add_common(speed, speed_opts);
  speed->add_option("--out", speed_out, "CSV output path");
  speed->add_option("--window", speed_window, "SSIM window (odd)");

  CommonOpts ent_opts;
  int ent_a = 0, ent_b = 1, ent_window = 7;
  double ent_fraction = 0.5, ent_sigma = 0.1;
  std::string ent_images;
  auto* entangle = app.add_subcommand("entangle", "branch-swap entanglement probe");
  add_common(entangle, ent_opts);
  entangle->add_option("--class-a", ent_a, "first class id");
  entangle->add_option("--class-b", ent_b, "second class id");
  entangle->add_option("--branch-fraction", ent_fraction, "elapsed fraction before the swap");
  entangle->add_option("--sigma", ent_sigma, "outline-distance threshold");
  entangle->add_option("--window", ent_window, "SSIM window (odd)");
  entangle->add_option("--save-images", ent_images, "directory for probe images");

  CommonOpts pos_opts;
  std::vector<std::string> pos_words;
  auto* positions = app.add_subcommand("positions", "classify all orderings of three words");
  add_common(positions, pos_opts);
  positions->add_option("--words", pos_words, "exactly three vocabulary words")
      ->expected(3)
      ->required();

  CommonOpts poly_opts;
  std::vector<int> poly_classes;
  int poly_per_set = 4;
  std::string poly_out = "cosine.csv";
  auto* polysemy = app.add_subcommand("polysemy", "embedding export for image sets");
  add_common(polysemy, poly_opts);
  polysemy->add_option("--classes", poly_classes, "class ids, one image set each")
      ->required();
  polysemy->add_option("--images-per-set", poly_per_set, "latent draws per set");
  polysemy->add_option("--out", poly_out, "CSV output path");

  std::string rep_records, rep_corpus, rep_out;
  auto* report = app.add_subcommand("report", "rebuild metrics from persisted records");
  report->add_option("--records", rep_records, "records.jsonl path")->required();
  report->add_option("--corpus", rep_corpus, "corpus JSONL for class names");
  report->add_option("--out", rep_out, "report JSON output path");

  std::string exp_records, exp_out;
  auto* exp = app.add_subcommand("export-blackbox", "successful prompts, one per line");
  exp->add_option("--records", exp_records, "records.jsonl path")->required();
  exp->add_option("--out", exp_out, "output text file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(run_opts, run_out, run_classes, run_baseline, run_blackbox,
                     run_fidis_cmd, run_fidis_ref);
    if (speed->parsed()) return cmd_speed(speed_opts, speed_out, speed_window);
    if (entangle->parsed())
      return cmd_entangle(ent_opts, ent_a, ent_b, ent_fraction, ent_sigma, ent_window,
                          ent_images);
    if (positions->parsed()) return cmd_positions(pos_opts, pos_words);
    if (polysemy->parsed())
      return cmd_polysemy(poly_opts, poly_classes, poly_per_set, poly_out);
    if (report->parsed()) return cmd_report(rep_records, rep_corpus, rep_out);
    if (exp->parsed()) return cmd_export(exp_records, exp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
