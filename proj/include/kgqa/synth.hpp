#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgqa/types.hpp"

namespace kgqa {

/// Shape of the generated corpus. Entities sit on a 2-D integer lattice
/// embedded in a planted_dim-space; each relation is a fixed lattice step,
/// so consistent edges are exact translations and embeddings are learnable.
struct SynthConfig {
  int n_entities = 200;
  int n_relations = 8;
  int n_edges = 1500;
  int n_images = 50;
  int max_concepts_per_image = 14;
  int n_questions = 300;
  double image_answer_fraction = 0.82;
  int planted_dim = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthPaths {
  std::string kg;
  std::string vectors;
  std::string images;
  std::string qa;
};

/// Writes the four dataset files; byte-identical output per seed.
void generate_synthetic(const SynthConfig& config, const SynthPaths& paths);

struct ConsistencyReport {
  bool ok = true;
  std::vector<std::string> problems;
  std::size_t n_edges = 0;
  std::size_t n_images = 0;
  std::size_t n_questions = 0;
  std::size_t n_image_source = 0;
};

/// Reloads the files and checks: supporting facts exist in the KG,
/// image-source answers appear among their image's concepts, and every
/// question/surface token has a vector.
ConsistencyReport check_consistency(const SynthPaths& paths);

}  // namespace kgqa
