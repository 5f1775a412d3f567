#include "ssr2/rta.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

namespace ssr2::rta {

namespace {

void check_entries(const std::vector<LexiconEntry>& entries, int dim,
                   const char* what) {
  require(!entries.empty(), what);
  std::unordered_set<std::string> ids;
  for (const auto& e : entries) {
    require(e.vec.size() == dim, "Lexicon: inconsistent vector dimension");
    require(std::abs(e.vec.norm() - 1.0) < 1e-6, "Lexicon: entry not unit-norm");
    require(ids.insert(e.id).second, "Lexicon: duplicate entry id");
  }
}

// Indices of the top-c entries by cosine similarity, ties by lexicon order.
std::vector<int> top_c(const Vector& query,
                       const std::vector<LexiconEntry>& entries, int c) {
  std::vector<int> order(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    order[i] = static_cast<int>(i);
  std::vector<double> sim(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    sim[i] = query.dot(entries[i].vec);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sim[static_cast<std::size_t>(a)] > sim[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(c));
  return order;
}

}  // namespace

int Lexicon::dim() const {
  require(!tags.empty(), "Lexicon: empty tag list");
  return static_cast<int>(tags.front().vec.size());
}

void Lexicon::validate() const {
  const int d = dim();
  check_entries(tags, d, "Lexicon: empty tag list");
  check_entries(attributes, d, "Lexicon: empty attribute list");
}

void Lexicon::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Lexicon: cannot open " + path.string());
  out.precision(17);
  out << "ssr2-lexicon " << dim() << ' ' << tags.size() << ' '
      << attributes.size() << '\n';
  auto write = [&](const std::vector<LexiconEntry>& entries) {
    for (const auto& e : entries) {
      out << e.id;
      for (int i = 0; i < e.vec.size(); ++i) out << ' ' << e.vec(i);
      out << '\n';
    }
  };
  write(tags);
  write(attributes);
  if (!out) throw std::runtime_error("Lexicon: write failed " + path.string());
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Lexicon: cannot open " + path.string());
  std::string magic;
  int d = 0;
  std::size_t n_tags = 0, n_attrs = 0;
  in >> magic >> d >> n_tags >> n_attrs;
  if (!in || magic != "ssr2-lexicon" || d < 1 || n_tags == 0 || n_attrs == 0)
    throw std::runtime_error("Lexicon: bad header in " + path.string());

  Lexicon lex;
  auto read = [&](std::vector<LexiconEntry>& entries, std::size_t n) {
    entries.resize(n);
    for (auto& e : entries) {
      e.vec.resize(d);
      in >> e.id;
      for (int i = 0; i < d; ++i) in >> e.vec(i);
      if (!in)
        throw std::runtime_error("Lexicon: truncated file " + path.string());
    }
  };
  read(lex.tags, n_tags);
  read(lex.attributes, n_attrs);
  lex.validate();
  return lex;
}

void RtaConfig::validate() const {
  require(alpha >= 0.0 && alpha < 1.0, "RtaConfig: alpha must be in [0,1)");
  require(candidates >= 1, "RtaConfig: candidates must be >= 1");
}

std::vector<double> sigma_weights(const RtaConfig& cfg) {
  cfg.validate();
  const int c = cfg.candidates;
  if (c == 1) return {1.0};
  std::vector<double> w(static_cast<std::size_t>(c), cfg.alpha / (c - 1));
  w[0] = 1.0 - cfg.alpha;
  return w;
}

Vector aggregate_text(const Vector& query, const Lexicon& lex,
                      const RtaConfig& cfg) {
  cfg.validate();
  lex.validate();
  require(std::abs(query.norm() - 1.0) < 1e-6,
          "aggregate_text: query must be unit-norm");
  require(query.size() == lex.dim(), "aggregate_text: dimension mismatch");
  require(cfg.candidates <= static_cast<int>(lex.tags.size()) &&
              cfg.candidates <= static_cast<int>(lex.attributes.size()),
          "aggregate_text: candidates exceed lexicon size");

  const auto w = sigma_weights(cfg);
  const auto tag_idx = top_c(query, lex.tags, cfg.candidates);
  const auto attr_idx = top_c(query, lex.attributes, cfg.candidates);

  Vector out = Vector::Zero(query.size());
  for (int i = 0; i < cfg.candidates; ++i)
    out += w[static_cast<std::size_t>(i)] *
           (lex.tags[static_cast<std::size_t>(tag_idx[static_cast<std::size_t>(i)])].vec +
            lex.attributes[static_cast<std::size_t>(attr_idx[static_cast<std::size_t>(i)])].vec);

  const double norm = out.norm();
  if (norm < 1e-12)
    throw std::runtime_error("aggregate_text: degenerate zero aggregate");
  return out / norm;
}

}  // namespace ssr2::rta
