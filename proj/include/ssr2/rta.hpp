#pragma once

#include "ssr2/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ssr2::rta {

struct LexiconEntry {
  std::string id;
  Vector vec;  // unit-norm
};

// Tag and attribute lexicons used for retrieval. Loadable from a plain-text
// tabular file:
//
//   ssr2-lexicon <dim> <num_tags> <num_attributes>
//   <id> <v1> ... <v_dim>        (num_tags rows, then num_attributes rows)
//
// Ids must be unique within each list and contain no whitespace.
struct Lexicon {
  std::vector<LexiconEntry> tags;
  std::vector<LexiconEntry> attributes;

  int dim() const;
  void validate() const;
  void save(const std::filesystem::path& path) const;
  static Lexicon load(const std::filesystem::path& path);
};

struct RtaConfig {
  double alpha = 0.5;
  int candidates = 4;  // c

  void validate() const;
};

// Candidate weights: sigma_1 = 1 - alpha, sigma_{i>1} = alpha/(c-1).
// c = 1 forces sigma_1 = 1 so that the weights always sum to 1.
std::vector<double> sigma_weights(const RtaConfig& cfg);

// Ranks tags and attributes independently by cosine similarity to the query
// (ties broken by lexicon order) and returns the L2-normalized
// sigma-weighted sum of the top-c tag + attribute vectors.
Vector aggregate_text(const Vector& query, const Lexicon& lex,
                      const RtaConfig& cfg);

}  // namespace ssr2::rta
