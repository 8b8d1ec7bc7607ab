#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcms/common.hpp"
#include "lcms/scene.hpp"

namespace lcms::lang {

/// Command grammar: `<prefix><template>` where the template holds the slots
/// `{ATTR}` (space-joined attribute words in any order) and `{NOUN}`.
struct Lexicon {
  std::array<std::vector<std::string>, sim::kColorCount> colors;
  std::array<std::vector<std::string>, sim::kShapeCount> shapes;
  std::array<std::vector<std::string>, sim::kSizeCount> sizes;
  std::vector<std::string> nouns;
  std::vector<std::string> templates;
  std::vector<std::string> prefixes;

  /// 5x3 colors, 2x3 shapes, 2x3 sizes, 4 nouns, 10 templates, {"", "please "}.
  static const Lexicon& standard();

  /// Every surface form must be a single lowercase ASCII word used under
  /// exactly one attribute value; templates must hold both slots once;
  /// no list may contain duplicates. Throws InvalidArgument otherwise.
  void validate() const;

  const std::vector<std::string>& forms(sim::Attribute a, int value) const;
  int surface_form_count(sim::Attribute a) const;

  /// All tokens the grammar can emit.
  std::set<std::string> vocabulary() const;
  std::uint64_t hash() const;
};

nlohmann::json to_json(const Lexicon& lexicon);
Lexicon lexicon_from_json(const nlohmann::json& j);
Lexicon load_lexicon(const std::string& path);

struct SentenceProvenance {
  int template_id = 0;
  int prefix_id = 0;
  int noun_id = 0;
  std::vector<sim::Attribute> attribute_order;
  std::vector<std::string> attribute_words;
};

struct Sentence {
  std::string text;
  std::optional<SentenceProvenance> provenance;
};

class NoDistinguisher : public Error {
 public:
  using Error::Error;
};

/// All inclusion-minimal attribute subsets that single out the target.
std::vector<sim::AttributeSet> distinguishing_attribute_sets(const sim::Scene& scene);

Sentence generate_sentence(const sim::Scene& scene, std::uint64_t seed,
                           const Lexicon& lexicon = Lexicon::standard());

/// Renders one sentence from explicit choices (shared by the generator and the CLI).
std::string compose(const Lexicon& lexicon, const SentenceProvenance& choice);

/// Command naming a color that no bowl in the scene has, or std::nullopt when
/// every color is present.
std::optional<Sentence> generate_absent_color_sentence(const sim::Scene& scene, std::uint64_t seed,
                                                       const Lexicon& lexicon = Lexicon::standard());

/// Number of distinct strings the grammar generates, in closed form:
/// prefixes * templates * nouns * sum over nonempty subsets S of |S|! * prod_{a in S} forms(a).
std::uint64_t count_surface_forms(const Lexicon& lexicon);

/// Lowercase, strip `.,!?`, split on whitespace.
std::vector<std::string> tokenize(std::string_view sentence);

class MalformedLine : public Error {
 public:
  MalformedLine(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(int line, int expected, int got)
      : Error("line " + std::to_string(line) + ": expected " + std::to_string(expected) +
              " values, got " + std::to_string(got)),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 50) : dim_(dim) {}

  /// Table of fallback vectors for every token of `vocabulary`.
  static EmbeddingTable synthetic(const std::set<std::string>& vocabulary, int dim);

  /// Stand-in for pretrained vectors: each attribute word is its value's
  /// direction plus an attribute direction plus `spread` times its own noise,
  /// so synonyms sit close together. Other tokens use fallback_vector().
  static EmbeddingTable clustered(const Lexicon& lexicon, int dim, double spread = 0.5);

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  void insert(const std::string& token, Eigen::VectorXd vector);
  const Eigen::VectorXd* find(const std::string& token) const;
  /// Tokens in lexicographic order.
  std::vector<std::string> tokens() const;

 private:
  int dim_;
  std::unordered_map<std::string, Eigen::VectorXd> vectors_;
};

/// Deterministic pseudo-random unit vector seeded by the token string.
Eigen::VectorXd fallback_vector(std::string_view token, int dim);

/// Reads the whitespace separated `token v1 ... vN` text format. Only tokens in
/// `vocabulary` are kept; vocabulary tokens missing from the file get
/// fallback_vector(). When `dim` is 0 it is taken from the first line.
EmbeddingTable load_embeddings(const std::string& path, const std::set<std::string>& vocabulary,
                               int dim = 0);

struct SentenceMatrix {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;  // l_s x l_w
  int valid_token_count = 0;
  bool truncated = false;
};

/// Row i is the embedding of token i; padding and unknown tokens are zero rows.
/// More than max_tokens tokens are truncated with a warning on stderr.
SentenceMatrix embed_sentence(const std::vector<std::string>& tokens, const EmbeddingTable& table,
                              int max_tokens);

}  // namespace lcms::lang
