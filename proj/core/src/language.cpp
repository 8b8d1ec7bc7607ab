#include "lcms/language.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

namespace lcms::lang {

using sim::Attribute;
using sim::AttributeSet;

namespace {

constexpr std::string_view kAttrSlot = "{ATTR}";
constexpr std::string_view kNounSlot = "{NOUN}";

Lexicon make_standard() {
  Lexicon lex;
  lex.colors = {{{"red", "crimson", "scarlet"},
                 {"green", "lime", "emerald"},
                 {"blue", "navy", "azure"},
                 {"yellow", "golden", "lemon"},
                 {"pink", "rose", "magenta"}}};
  lex.shapes = {{{"round", "circular", "rounded"}, {"square", "squared", "boxy"}}};
  lex.sizes = {{{"small", "little", "tiny"}, {"large", "big", "huge"}}};
  lex.nouns = {"bowl", "basin", "dish", "container"};
  lex.templates = {
      "move towards the {ATTR} {NOUN}",
      "put the cube in the {ATTR} {NOUN}",
      "drop the cube into the {ATTR} {NOUN}",
      "place the block in the {ATTR} {NOUN}",
      "go to the {ATTR} {NOUN}",
      "bring the cube to the {ATTR} {NOUN}",
      "move the cube over the {ATTR} {NOUN}",
      "release the cube above the {ATTR} {NOUN}",
      "deliver the cube to the {ATTR} {NOUN}",
      "put it into the {ATTR} {NOUN}",
  };
  lex.prefixes = {"", "please "};
  return lex;
}

bool is_word(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c >= 'a' && c <= 'z';
  });
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != text.npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

void replace_first(std::string& text, std::string_view slot, std::string_view value) {
  const auto pos = text.find(slot);
  if (pos != std::string::npos) text.replace(pos, slot.size(), value);
}

int value_index(const sim::Bowl& bowl, Attribute a) {
  switch (a) {
    case Attribute::Color: return static_cast<int>(bowl.color);
    case Attribute::Shape: return static_cast<int>(bowl.shape);
    case Attribute::Size: return static_cast<int>(bowl.size);
  }
  return 0;
}

const std::string& pick(const std::vector<std::string>& options, Rng& rng, const char* what) {
  if (options.empty()) throw InvalidArgument(std::string("lexicon has no ") + what);
  return options[rng.below(options.size())];
}

}  // namespace

const Lexicon& Lexicon::standard() {
  static const Lexicon lexicon = make_standard();
  return lexicon;
}

const std::vector<std::string>& Lexicon::forms(Attribute a, int value) const {
  switch (a) {
    case Attribute::Color: return colors.at(static_cast<std::size_t>(value));
    case Attribute::Shape: return shapes.at(static_cast<std::size_t>(value));
    case Attribute::Size: return sizes.at(static_cast<std::size_t>(value));
  }
  throw InvalidArgument("unknown attribute");
}

int Lexicon::surface_form_count(Attribute a) const {
  int n = 0;
  const int values = a == Attribute::Color ? sim::kColorCount
                     : a == Attribute::Shape ? sim::kShapeCount
                                             : sim::kSizeCount;
  for (int v = 0; v < values; ++v) n += static_cast<int>(forms(a, v).size());
  return n;
}

void Lexicon::validate() const {
  std::vector<std::string> all_forms;
  auto collect = [&](const auto& groups) {
    for (const auto& group : groups)
      for (const auto& form : group) {
        if (!is_word(form))
          throw InvalidArgument("lexicon: surface form '" + form + "' is not a lowercase word");
        all_forms.push_back(form);
      }
  };
  collect(colors);
  collect(shapes);
  collect(sizes);
  if (has_duplicates(all_forms))
    throw InvalidArgument("lexicon: a surface form appears under two attribute values");
  for (const auto& noun : nouns)
    if (!is_word(noun)) throw InvalidArgument("lexicon: noun '" + noun + "' is not a lowercase word");
  for (const auto& t : templates) {
    if (count_occurrences(t, kAttrSlot) != 1 || count_occurrences(t, kNounSlot) != 1)
      throw InvalidArgument("lexicon: template '" + t + "' must contain {ATTR} and {NOUN} once");
  }
  if (has_duplicates(nouns) || has_duplicates(templates) || has_duplicates(prefixes))
    throw InvalidArgument("lexicon: duplicate noun, template or prefix");
}

std::set<std::string> Lexicon::vocabulary() const {
  std::set<std::string> vocab;
  auto add_text = [&](const std::string& text) {
    for (auto& token : tokenize(text))
      if (token != "{attr}" && token != "{noun}") vocab.insert(token);
  };
  for (const auto& groups : {std::vector<std::vector<std::string>>(colors.begin(), colors.end()),
                             std::vector<std::vector<std::string>>(shapes.begin(), shapes.end()),
                             std::vector<std::vector<std::string>>(sizes.begin(), sizes.end())})
    for (const auto& group : groups)
      for (const auto& form : group) add_text(form);
  for (const auto& n : nouns) add_text(n);
  for (const auto& t : templates) add_text(t);
  for (const auto& p : prefixes) add_text(p);
  return vocab;
}

std::uint64_t Lexicon::hash() const { return fnv1a(to_json(*this).dump()); }

nlohmann::json to_json(const Lexicon& lex) {
  auto named = [](const auto& groups, auto to_name) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t v = 0; v < groups.size(); ++v) j[std::string(to_name(v))] = groups[v];
    return j;
  };
  return {
      {"colors", named(lex.colors, [](std::size_t v) { return sim::to_string(static_cast<sim::Color>(v)); })},
      {"shapes", named(lex.shapes, [](std::size_t v) { return sim::to_string(static_cast<sim::Shape>(v)); })},
      {"sizes", named(lex.sizes, [](std::size_t v) { return sim::to_string(static_cast<sim::Size>(v)); })},
      {"nouns", lex.nouns},
      {"templates", lex.templates},
      {"prefixes", lex.prefixes},
  };
}

Lexicon lexicon_from_json(const nlohmann::json& j) {
  try {
    Lexicon lex;
    for (const auto& [name, forms] : j.at("colors").items())
      lex.colors[static_cast<std::size_t>(sim::parse_color(name))] = forms.get<std::vector<std::string>>();
    for (const auto& [name, forms] : j.at("shapes").items())
      lex.shapes[static_cast<std::size_t>(sim::parse_shape(name))] = forms.get<std::vector<std::string>>();
    for (const auto& [name, forms] : j.at("sizes").items())
      lex.sizes[static_cast<std::size_t>(sim::parse_size(name))] = forms.get<std::vector<std::string>>();
    lex.nouns = j.at("nouns").get<std::vector<std::string>>();
    lex.templates = j.at("templates").get<std::vector<std::string>>();
    lex.prefixes = j.at("prefixes").get<std::vector<std::string>>();
    lex.validate();
    return lex;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed lexicon json: ") + e.what());
  }
}

Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed lexicon json in " + path + ": " + e.what());
  }
  return lexicon_from_json(j);
}

std::vector<AttributeSet> distinguishing_attribute_sets(const sim::Scene& scene) {
  std::vector<AttributeSet> minimal;
  // Subsets come ordered by size, so a set is minimal iff it contains none found so far.
  for (const auto& subset : AttributeSet::nonempty_subsets()) {
    if (!sim::distinguishes(scene, subset)) continue;
    const bool has_smaller = std::any_of(minimal.begin(), minimal.end(),
                                         [&](AttributeSet m) { return subset.contains(m); });
    if (!has_smaller) minimal.push_back(subset);
  }
  if (minimal.empty())
    throw NoDistinguisher("target bowl is indistinguishable from a distractor");
  return minimal;
}

std::string compose(const Lexicon& lexicon, const SentenceProvenance& choice) {
  std::string phrase;
  for (const auto& word : choice.attribute_words) {
    if (!phrase.empty()) phrase += ' ';
    phrase += word;
  }
  std::string text = lexicon.templates.at(static_cast<std::size_t>(choice.template_id));
  replace_first(text, kAttrSlot, phrase);
  replace_first(text, kNounSlot, lexicon.nouns.at(static_cast<std::size_t>(choice.noun_id)));
  return lexicon.prefixes.at(static_cast<std::size_t>(choice.prefix_id)) + text;
}

namespace {

Sentence finish(const Lexicon& lexicon, SentenceProvenance choice, Rng& rng) {
  if (lexicon.templates.empty() || lexicon.nouns.empty() || lexicon.prefixes.empty())
    throw InvalidArgument("lexicon has no templates, nouns or prefixes");
  choice.template_id = static_cast<int>(rng.below(lexicon.templates.size()));
  choice.noun_id = static_cast<int>(rng.below(lexicon.nouns.size()));
  choice.prefix_id = static_cast<int>(rng.below(lexicon.prefixes.size()));
  Sentence sentence;
  sentence.text = compose(lexicon, choice);
  sentence.provenance = std::move(choice);
  return sentence;
}

}  // namespace

Sentence generate_sentence(const sim::Scene& scene, std::uint64_t seed, const Lexicon& lexicon) {
  const auto sets = distinguishing_attribute_sets(scene);
  Rng rng(seed);
  const AttributeSet chosen = sets[rng.below(sets.size())];
  SentenceProvenance choice;
  choice.attribute_order = chosen.members();
  shuffle(choice.attribute_order, rng);
  const sim::Bowl& target = scene.target();
  for (auto a : choice.attribute_order)
    choice.attribute_words.push_back(pick(lexicon.forms(a, value_index(target, a)), rng, "synonyms"));
  return finish(lexicon, std::move(choice), rng);
}

std::optional<Sentence> generate_absent_color_sentence(const sim::Scene& scene, std::uint64_t seed,
                                                       const Lexicon& lexicon) {
  std::vector<int> absent;
  for (int c = 0; c < sim::kColorCount; ++c) {
    const bool present = std::any_of(scene.bowls.begin(), scene.bowls.end(), [&](const sim::Bowl& b) {
      return static_cast<int>(b.color) == c;
    });
    if (!present) absent.push_back(c);
  }
  if (absent.empty()) return std::nullopt;
  Rng rng(seed);
  const int color = absent[rng.below(absent.size())];
  SentenceProvenance choice;
  choice.attribute_order = {Attribute::Color};
  choice.attribute_words = {pick(lexicon.forms(Attribute::Color, color), rng, "synonyms")};
  return finish(lexicon, std::move(choice), rng);
}

std::uint64_t count_surface_forms(const Lexicon& lexicon) {
  lexicon.validate();
  std::uint64_t phrases = 0;
  for (const auto& subset : AttributeSet::nonempty_subsets()) {
    std::uint64_t n = 1;
    for (auto a : subset.members()) n *= static_cast<std::uint64_t>(lexicon.surface_form_count(a));
    for (int k = 2; k <= subset.size(); ++k) n *= static_cast<std::uint64_t>(k);
    phrases += n;
  }
  return phrases * lexicon.templates.size() * lexicon.nouns.size() * lexicon.prefixes.size();
}

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '.' || c == ',' || c == '!' || c == '?') continue;
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.push_back(static_cast<char>(std::tolower(c)));
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingTable EmbeddingTable::synthetic(const std::set<std::string>& vocabulary, int dim) {
  EmbeddingTable table(dim);
  for (const auto& token : vocabulary) table.insert(token, fallback_vector(token, dim));
  return table;
}

EmbeddingTable EmbeddingTable::clustered(const Lexicon& lexicon, int dim, double spread) {
  EmbeddingTable table = synthetic(lexicon.vocabulary(), dim);
  const std::pair<sim::Attribute, int> attributes[] = {{sim::Attribute::Color, sim::kColorCount},
                                                       {sim::Attribute::Shape, sim::kShapeCount},
                                                       {sim::Attribute::Size, sim::kSizeCount}};
  for (const auto& [a, count] : attributes) {
    const std::string attr = "#" + sim::AttributeSet{a}.name();
    for (int value = 0; value < count; ++value) {
      const Eigen::VectorXd center =
          fallback_vector(attr + ":" + std::to_string(value), dim) + 0.5 * fallback_vector(attr, dim);
      for (const auto& word : lexicon.forms(a, value)) {
        const Eigen::VectorXd v = center + spread * fallback_vector(word, dim);
        table.insert(word, v.normalized());
      }
    }
  }
  return table;
}

void EmbeddingTable::insert(const std::string& token, Eigen::VectorXd vector) {
  if (vector.size() != dim_) throw InvalidArgument("embedding dimension mismatch for " + token);
  vectors_[token] = std::move(vector);
}

std::vector<std::string> EmbeddingTable::tokens() const {
  std::vector<std::string> out;
  out.reserve(vectors_.size());
  for (const auto& [token, v] : vectors_) out.push_back(token);
  std::sort(out.begin(), out.end());
  return out;
}

const Eigen::VectorXd* EmbeddingTable::find(const std::string& token) const {
  const auto it = vectors_.find(token);
  return it == vectors_.end() ? nullptr : &it->second;
}

Eigen::VectorXd fallback_vector(std::string_view token, int dim) {
  Rng rng(fnv1a(token));
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  const double norm = v.norm();
  return norm > 0 ? Eigen::VectorXd(v / norm) : v;
}

EmbeddingTable load_embeddings(const std::string& path, const std::set<std::string>& vocabulary,
                               int dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings " + path);
  std::unordered_map<std::string, Eigen::VectorXd> found;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    std::string cell;
    while (fields >> cell) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw MalformedLine(line_no, "not a number: '" + cell + "'");
      values.push_back(v);
    }
    if (values.empty()) throw MalformedLine(line_no, "token without vector");
    if (dim == 0) dim = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != dim)
      throw DimensionMismatch(line_no, dim, static_cast<int>(values.size()));
    if (vocabulary.count(token))
      found[token] = Eigen::Map<Eigen::VectorXd>(values.data(), dim);
  }
  if (dim == 0) throw MalformedLine(line_no, "empty embedding file");
  EmbeddingTable table(dim);
  for (const auto& token : vocabulary) {
    auto it = found.find(token);
    table.insert(token, it != found.end() ? it->second : fallback_vector(token, dim));
  }
  return table;
}

SentenceMatrix embed_sentence(const std::vector<std::string>& tokens, const EmbeddingTable& table,
                              int max_tokens) {
  SentenceMatrix m;
  m.rows.setZero(max_tokens, table.dim());
  int n = static_cast<int>(tokens.size());
  if (n > max_tokens) {
    std::cerr << "warning: sentence has " << n << " tokens; truncated to " << max_tokens << '\n';
    n = max_tokens;
    m.truncated = true;
  }
  m.valid_token_count = n;
  for (int i = 0; i < n; ++i) {
    if (const auto* v = table.find(tokens[static_cast<std::size_t>(i)])) m.rows.row(i) = v->transpose();
  }
  return m;
}

}  // namespace lcms::lang
