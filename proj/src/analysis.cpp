#include "atm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace atm {

namespace {

std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> w(static_cast<size_t>(n));
  double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& x : w) x /= sum;
  return w;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  double pos = q * (static_cast<double>(v.size()) - 1.0);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

double ssim(const ImageArray& a, const ImageArray& b, const SsimParams& p) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (p.window < 3 || p.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd >= 3");
  if (p.window > a.height || p.window > a.width)
    throw std::invalid_argument("ssim: window larger than image");

  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  const auto w1d = gaussian_window(p.window, p.sigma);
  const int half = p.window / 2;

  auto pix = [&](const ImageArray& img, int y, int x, int ch) {
    return img.data[(y * img.width + x) * img.channels + ch];
  };

  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    for (int y = half; y < a.height - half; ++y) {
      for (int x = half; x < a.width - half; ++x) {
        double mu_a = 0, mu_b = 0;
        for (int dy = -half; dy <= half; ++dy) {
          for (int dx = -half; dx <= half; ++dx) {
            double w = w1d[static_cast<size_t>(dy + half)] * w1d[static_cast<size_t>(dx + half)];
            mu_a += w * pix(a, y + dy, x + dx, ch);
            mu_b += w * pix(b, y + dy, x + dx, ch);
          }
        }
        double var_a = 0, var_b = 0, cov = 0;
        for (int dy = -half; dy <= half; ++dy) {
          for (int dx = -half; dx <= half; ++dx) {
            double w = w1d[static_cast<size_t>(dy + half)] * w1d[static_cast<size_t>(dx + half)];
            double da = pix(a, y + dy, x + dx, ch) - mu_a;
            double db = pix(b, y + dy, x + dx, ch) - mu_b;
            var_a += w * da * da;
            var_b += w * db * db;
            cov += w * da * db;
          }
        }
        double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

ImageArray sobel_edges(const ImageArray& image) {
  ImageArray out = image;
  out.data.setZero();
  auto pix = [&](int y, int x, int ch) {
    return image.data[(y * image.width + x) * image.channels + ch];
  };
  double maxmag = 0.0;
  for (int ch = 0; ch < image.channels; ++ch) {
    for (int y = 1; y < image.height - 1; ++y) {
      for (int x = 1; x < image.width - 1; ++x) {
        double gx = -pix(y - 1, x - 1, ch) - 2 * pix(y, x - 1, ch) - pix(y + 1, x - 1, ch) +
                    pix(y - 1, x + 1, ch) + 2 * pix(y, x + 1, ch) + pix(y + 1, x + 1, ch);
        double gy = -pix(y - 1, x - 1, ch) - 2 * pix(y - 1, x, ch) - pix(y - 1, x + 1, ch) +
                    pix(y + 1, x - 1, ch) + 2 * pix(y + 1, x, ch) + pix(y + 1, x + 1, ch);
        double mag = std::sqrt(gx * gx + gy * gy);
        out.data[(y * image.width + x) * image.channels + ch] = mag;
        maxmag = std::max(maxmag, mag);
      }
    }
  }
  if (maxmag > 0.0) out.data /= maxmag;
  return out;
}

GenerationTrajectory generate_with_capture(const Generator& gen, const Vector& z,
                                           const Matrix& prompt_emb) {
  GenerationTrajectory traj;
  Generator::State state = gen.init(z, prompt_emb);
  traj.images.push_back(gen.decode(state));
  while (state.t > 0) {
    gen.step(state, prompt_emb);
    traj.images.push_back(gen.decode(state));
  }
  return traj;
}

ImageArray prompt_swap_generate(const Generator& gen, const Vector& z, const Matrix& emb_a,
                                const Matrix& emb_b, int t_branch) {
  if (t_branch <= 0 || t_branch >= gen.diffusion_steps())
    throw std::invalid_argument("prompt_swap_generate: t_branch out of range");
  Generator::State state = gen.init(z, emb_a);
  while (state.t > t_branch) gen.step(state, emb_a);
  while (state.t > 0) gen.step(state, emb_b);
  return gen.decode(state);
}

SpeedProfile speed_profile(const GenerationTrajectory& traj, const SsimParams& p) {
  if (traj.images.size() < 2) throw std::invalid_argument("speed_profile: trajectory too short");
  SpeedProfile prof;
  const ImageArray& final = traj.final_image();
  for (const auto& img : traj.images) prof.s.push_back(ssim(img, final, p));
  for (size_t i = 0; i + 1 < prof.s.size(); ++i) prof.v.push_back(prof.s[i + 1] - prof.s[i]);
  return prof;
}

std::vector<SpeedPopulationRow> speed_population(const std::vector<PromptSpec>& specs,
                                                 const BackendBundle& backends,
                                                 const Vector& shared_z,
                                                 const SsimParams& p) {
  const int steps = backends.generator->diffusion_steps();
  std::vector<SpeedPopulationRow> rows(static_cast<size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) rows[static_cast<size_t>(i)].step = steps - i;

  for (const auto& spec : specs) {
    Matrix emb(spec.clean.length(), backends.embedding_table.dim());
    for (int k = 0; k < spec.clean.length(); ++k)
      emb.row(k) = backends.embedding_table.matrix.row(spec.clean.indices[static_cast<size_t>(k)]);
    auto traj = generate_with_capture(*backends.generator, shared_z, emb);
    auto prof = speed_profile(traj, p);
    for (size_t i = 0; i < prof.s.size(); ++i) rows[i].raw.push_back(prof.s[i]);
  }
  for (auto& row : rows) {
    row.n = static_cast<int>(row.raw.size());
    if (row.n == 0) continue;
    row.min = *std::min_element(row.raw.begin(), row.raw.end());
    row.max = *std::max_element(row.raw.begin(), row.raw.end());
    row.q25 = quantile(row.raw, 0.25);
    row.median = quantile(row.raw, 0.5);
    row.q75 = quantile(row.raw, 0.75);
  }
  return rows;
}

void write_speed_csv(const std::vector<SpeedPopulationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,min,q25,median,q75,max,n\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.min << ',' << r.q25 << ',' << r.median << ',' << r.q75 << ','
        << r.max << ',' << r.n << '\n';
}

EntanglementReport entanglement_probe(const Matrix& emb_a, const Matrix& emb_b,
                                      const BackendBundle& backends, const Vector& z,
                                      const EntanglementProbeConfig& cfg,
                                      const SsimParams& ssim_params) {
  if (cfg.sigma <= 0.0 || cfg.sigma >= 1.0)
    throw std::invalid_argument("entanglement_probe: sigma must be in (0, 1)");
  const Generator& gen = *backends.generator;
  const int steps = gen.diffusion_steps();
  int elapsed = std::clamp(static_cast<int>(std::lround(cfg.t_branch_fraction * steps)), 1,
                           steps - 1);
  EntanglementReport report;
  report.t_branch = steps - elapsed;

  auto traj_a = generate_with_capture(gen, z, emb_a);
  auto traj_b = generate_with_capture(gen, z, emb_b);
  report.pure_a = traj_a.final_image();
  report.pure_b = traj_b.final_image();
  report.branched = prompt_swap_generate(gen, z, emb_a, emb_b, report.t_branch);

  const ImageArray& early_a = traj_a.images[static_cast<size_t>(elapsed)];
  const ImageArray& early_b = traj_b.images[static_cast<size_t>(elapsed)];
  report.outline_distance =
      1.0 - ssim(sobel_edges(early_a), sobel_edges(early_b), ssim_params);
  report.entangled = report.outline_distance < cfg.sigma;
  return report;
}

std::vector<PositionRecord> positioning_permutations(const std::array<std::string, 3>& words,
                                                     const BackendBundle& backends,
                                                     const Vector& shared_z) {
  if (words[0] == words[1] || words[0] == words[2] || words[1] == words[2])
    throw std::invalid_argument("positioning_permutations: words must be distinct");
  std::array<int, 3> perm = {0, 1, 2};
  std::vector<PositionRecord> records;
  do {
    std::string text = "a photo of " + words[static_cast<size_t>(perm[0])] + " " +
                       words[static_cast<size_t>(perm[1])] + " and " +
                       words[static_cast<size_t>(perm[2])];
    TokenSequence seq = tokenize(text, backends.vocab);
    Matrix emb(seq.length(), backends.embedding_table.dim());
    for (int k = 0; k < seq.length(); ++k)
      emb.row(k) = backends.embedding_table.matrix.row(seq.indices[static_cast<size_t>(k)]);

    PositionRecord rec;
    rec.ordering = perm;
    rec.prompt_text = text;
    rec.image = backends.generator->generate(shared_z, emb);
    rec.scores = backends.classifier->classify(rec.image);
    rec.scores.maxCoeff(&rec.predicted_class);
    records.push_back(std::move(rec));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return records;
}

PolysemyExport polysemy_export(
    const std::vector<std::pair<std::string, std::vector<ImageArray>>>& image_sets,
    const TokenSequence& text, const BackendBundle& backends) {
  if (image_sets.empty()) throw std::invalid_argument("polysemy_export: no image sets");
  for (const auto& [name, images] : image_sets)
    if (images.empty()) throw std::invalid_argument("polysemy_export: empty set " + name);
  if (!backends.image_embedder) throw std::invalid_argument("polysemy_export: no image embedder");

  PolysemyExport exp;
  std::vector<Vector> rows;
  rows.push_back(backends.text_embedder->embed_text(text));
  exp.labels.push_back("text");
  for (const auto& [name, images] : image_sets) {
    std::vector<double> cos_to_text;
    for (size_t i = 0; i < images.size(); ++i) {
      Vector e = backends.image_embedder->embed_image(images[i]);
      cos_to_text.push_back(e.dot(rows[0]));
      rows.push_back(e);
      exp.labels.push_back(name + "/" + std::to_string(i));
    }
    exp.set_to_text.emplace_back(name, std::move(cos_to_text));
  }
  exp.embeddings.resize(static_cast<Eigen::Index>(rows.size()), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i)
    exp.embeddings.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  exp.cosine = exp.embeddings * exp.embeddings.transpose();
  return exp;
}

void write_cosine_csv(const PolysemyExport& exp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "label";
  for (const auto& l : exp.labels) out << ',' << l;
  out << '\n';
  for (Eigen::Index i = 0; i < exp.cosine.rows(); ++i) {
    out << exp.labels[static_cast<size_t>(i)];
    for (Eigen::Index j = 0; j < exp.cosine.cols(); ++j) out << ',' << exp.cosine(i, j);
    out << '\n';
  }
}

}  // namespace atm
