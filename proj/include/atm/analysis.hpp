#pragma once

#include <array>
#include <string>
#include <vector>

#include "atm/backends.hpp"
#include "atm/prompt.hpp"
#include "atm/rng.hpp"

namespace atm {

struct SsimParams {
  int window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  double sigma = 1.5;
};

// Mean windowed SSIM with a gaussian window; symmetric in (a, b).
double ssim(const ImageArray& a, const ImageArray& b, const SsimParams& p);

// Sobel gradient-magnitude map, normalized to [0, 1].
ImageArray sobel_edges(const ImageArray& image);

struct GenerationTrajectory {
  std::vector<ImageArray> images;  // index 0 = decode of the initial noise
  int class_id = -1;
  std::string prompt_text;

  // images.size() == diffusion steps + 1; last element is the final output
  const ImageArray& final_image() const { return images.back(); }
};

// Decoded image at every step t = T ... 0; the last element is bit-identical
// to generate()'s output.
GenerationTrajectory generate_with_capture(const Generator& gen, const Vector& z,
                                           const Matrix& prompt_emb);

// Run under emb_a down to t_branch remaining steps, then continue under emb_b.
ImageArray prompt_swap_generate(const Generator& gen, const Vector& z, const Matrix& emb_a,
                                const Matrix& emb_b, int t_branch);

struct SpeedProfile {
  std::vector<double> s;  // s[i] = SSIM(image at t = T - i, final); s.back() = 1
  std::vector<double> v;  // v[i] = s[i+1] - s[i], one entry per step
};

// s(t) = SSIM(x_t, x_0) over the trajectory, plus discrete speeds.
SpeedProfile speed_profile(const GenerationTrajectory& traj, const SsimParams& p);

struct SpeedPopulationRow {
  int step = 0;  // steps remaining, T ... 0
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
  int n = 0;
  std::vector<double> raw;
};

// Per-step distribution of s(t) across classes generated from a shared z.
std::vector<SpeedPopulationRow> speed_population(const std::vector<PromptSpec>& specs,
                                                 const BackendBundle& backends,
                                                 const Vector& shared_z,
                                                 const SsimParams& p);

void write_speed_csv(const std::vector<SpeedPopulationRow>& rows, const std::string& path);

struct EntanglementProbeConfig {
  double t_branch_fraction = 0.16;  // fraction of elapsed steps before the swap
  double sigma = 0.5;               // outline-distance threshold
};

struct EntanglementReport {
  ImageArray pure_a;
  ImageArray pure_b;
  ImageArray branched;  // A -> B
  double outline_distance = 0.0;
  bool entangled = false;  // outline_distance < sigma
  int t_branch = 0;
};

// Branch-swap probe: early outline similarity between the two prompts'
// trajectories, measured as 1 - SSIM between Sobel edge maps.
EntanglementReport entanglement_probe(const Matrix& emb_a, const Matrix& emb_b,
                                      const BackendBundle& backends, const Vector& z,
                                      const EntanglementProbeConfig& cfg,
                                      const SsimParams& ssim_params);

struct PositionRecord {
  std::array<int, 3> ordering;  // permutation of {0, 1, 2}
  std::string prompt_text;
  ImageArray image;
  Vector scores;
  int predicted_class = -1;
};

// All 3! orderings of "a photo of {A} {B} and {C}", shared z, classified.
std::vector<PositionRecord> positioning_permutations(const std::array<std::string, 3>& words,
                                                     const BackendBundle& backends,
                                                     const Vector& shared_z);

struct PolysemyExport {
  std::vector<std::string> labels;  // text first, then "<set>/<index>" per image
  Matrix embeddings;                // unit-norm rows
  Matrix cosine;                    // full pairwise cosine matrix
  // cosine of every image of a set against the text embedding
  std::vector<std::pair<std::string, std::vector<double>>> set_to_text;
};

PolysemyExport polysemy_export(
    const std::vector<std::pair<std::string, std::vector<ImageArray>>>& image_sets,
    const TokenSequence& text, const BackendBundle& backends);

void write_cosine_csv(const PolysemyExport& exp, const std::string& path);

}  // namespace atm
