#include "cdyn/tasks/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "cdyn/errors.hpp"

namespace cdyn {

namespace {

constexpr std::array<std::string_view, 4> kKindNames{"selective-copying", "memorization",
                                                     "noisy-recall", "fuzzy-recall"};

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

std::int32_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {  // [lo, hi)
  return static_cast<std::int32_t>(std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng));
}

struct RecallLayout {
  std::size_t keys = 0;
  std::size_t queries = 0;
  std::size_t region = 0;
  std::size_t pairs = 0;
  std::size_t noise = 0;
  std::size_t padding = 0;
};

// Pairs come in whole rounds (every key once per round) so token frequencies
// say nothing about which value belongs to which key.
RecallLayout noisy_layout(const TaskSpec& s) {
  RecallLayout l;
  l.keys = s.vocab_size / 2;
  l.queries = s.multi_query ? l.keys : 1;
  if (s.seq_len < l.queries + 1) return l;
  l.region = s.seq_len - 1 - l.queries;
  l.noise = static_cast<std::size_t>(std::lround(s.frac_noise * static_cast<double>(l.region)));
  if (l.noise > l.region) l.noise = l.region;
  const std::size_t free_pairs = (l.region - l.noise) / 2;
  l.pairs = l.keys ? free_pairs / l.keys * l.keys : 0;
  l.padding = l.region - l.noise - 2 * l.pairs;
  return l;
}

struct FuzzyLayout {
  std::size_t pairs = 0;
  std::size_t queries = 0;
  std::size_t unit = 0;  // tokens per query: key span + value span minus its last token
  std::size_t padding = 0;
};

FuzzyLayout fuzzy_layout(const TaskSpec& s) {
  FuzzyLayout l;
  const std::size_t pair = s.key_len + s.value_len;
  l.unit = pair - 1;
  if (s.seq_len < 1 + l.unit) return l;
  if (s.multi_query) {
    l.pairs = l.queries = (s.seq_len - 1) / (pair + l.unit);
  } else {
    l.queries = 1;
    l.pairs = (s.seq_len - 1 - l.unit) / pair;
  }
  const std::size_t used = l.pairs * pair + 1 + l.queries * l.unit;
  l.padding = s.seq_len >= used ? s.seq_len - used : 0;
  return l;
}

bool is_key(const TaskSpec& s, std::int32_t t) {
  return t >= 0 && static_cast<std::size_t>(t) < s.vocab_size / 2;
}
bool is_value(const TaskSpec& s, std::int32_t t) {
  return t >= 0 && static_cast<std::size_t>(t) >= s.vocab_size / 2 &&
         static_cast<std::size_t>(t) < s.vocab_size;
}

std::size_t delimiter_pos(const TaskSpec& s, const TaskExample& ex) {
  const auto it = std::find(ex.tokens.begin(), ex.tokens.end(), s.delimiter());
  return static_cast<std::size_t>(it - ex.tokens.begin());
}

TaskExample make_noisy(const TaskSpec& s, Rng& rng) {
  const RecallLayout l = noisy_layout(s);
  std::vector<std::int32_t> values(l.keys);
  std::iota(values.begin(), values.end(), static_cast<std::int32_t>(l.keys));
  std::shuffle(values.begin(), values.end(), rng);

  std::vector<std::int32_t> order;
  for (std::size_t r = 0; r < l.pairs / std::max<std::size_t>(l.keys, 1); ++r) {
    std::vector<std::int32_t> round(l.keys);
    std::iota(round.begin(), round.end(), 0);
    std::shuffle(round.begin(), round.end(), rng);
    order.insert(order.end(), round.begin(), round.end());
  }
  // Noise tokens go into the gaps between (never inside) pairs.
  std::vector<std::size_t> gap_noise(order.size() + 1, 0);
  for (std::size_t n = 0; n < l.noise; ++n) ++gap_noise[uniform(rng, 0, gap_noise.size())];

  TaskExample ex;
  auto push = [&](std::int32_t tok, std::int32_t tgt) {
    ex.tokens.push_back(tok);
    ex.targets.push_back(tgt);
  };
  auto noise = [&](std::size_t g) {
    for (std::size_t n = 0; n < gap_noise[g]; ++n)
      push(static_cast<std::int32_t>(s.vocab_size) + uniform(rng, 0, s.noise_vocab_size), kIgnore);
  };
  for (std::size_t p = 0; p < order.size(); ++p) {
    noise(p);
    push(order[p], kIgnore);
    push(values[static_cast<std::size_t>(order[p])], kIgnore);
  }
  noise(order.size());
  // Blanks sit after the pairs: a constant run at the start would give a
  // causal model a position clock (fraction of blanks in the prefix).
  for (std::size_t p = 0; p < l.padding; ++p) push(s.blank(), kIgnore);
  push(s.delimiter(), kIgnore);
  std::vector<std::int32_t> queried(l.keys);
  std::iota(queried.begin(), queried.end(), 0);
  std::shuffle(queried.begin(), queried.end(), rng);
  for (std::size_t q = 0; q < l.queries; ++q)
    push(queried[q], values[static_cast<std::size_t>(queried[q])]);
  return ex;
}

TaskExample make_fuzzy(const TaskSpec& s, Rng& rng) {
  const FuzzyLayout l = fuzzy_layout(s);
  const std::size_t half = s.vocab_size / 2;
  std::vector<std::vector<std::int32_t>> keys, vals;
  std::set<std::vector<std::int32_t>> seen;
  while (keys.size() < l.pairs) {
    std::vector<std::int32_t> k(s.key_len);
    for (auto& t : k) t = uniform(rng, 0, half);
    if (!seen.insert(k).second) continue;
    std::vector<std::int32_t> v(s.value_len);
    for (auto& t : v) t = uniform(rng, half, s.vocab_size);
    keys.push_back(std::move(k));
    vals.push_back(std::move(v));
  }
  TaskExample ex;
  auto push = [&](std::int32_t tok, std::int32_t tgt) {
    ex.tokens.push_back(tok);
    ex.targets.push_back(tgt);
  };
  for (std::size_t p = 0; p < l.padding; ++p) push(s.blank(), kIgnore);
  for (std::size_t p = 0; p < l.pairs; ++p) {
    for (auto t : keys[p]) push(t, kIgnore);
    for (auto t : vals[p]) push(t, kIgnore);
  }
  push(s.delimiter(), kIgnore);
  std::vector<std::size_t> order(l.pairs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t q = 0; q < l.queries; ++q) {
    const auto& k = keys[order[q]];
    const auto& v = vals[order[q]];
    for (std::size_t t = 0; t + 1 < k.size(); ++t) push(k[t], kIgnore);
    push(k.back(), v[0]);
    for (std::size_t t = 0; t + 1 < v.size(); ++t) push(v[t], v[t + 1]);
  }
  return ex;
}

TaskExample make_copy(const TaskSpec& s, Rng& rng) {
  const std::size_t m = s.num_tokens_to_copy;
  const std::size_t region = s.seq_len - m;
  std::vector<std::size_t> slots(region);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(m);
  std::sort(slots.begin(), slots.end());
  TaskExample ex;
  ex.tokens.assign(region, s.blank());
  ex.targets.assign(region, kIgnore);
  std::vector<std::int32_t> content(m);
  for (std::size_t c = 0; c < m; ++c) ex.tokens[slots[c]] = content[c] = uniform(rng, 0, s.vocab_size);
  ex.tokens.push_back(s.delimiter());
  ex.targets.push_back(content[0]);
  for (std::size_t c = 0; c + 1 < m; ++c) {
    ex.tokens.push_back(content[c]);
    ex.targets.push_back(content[c + 1]);
  }
  return ex;
}

TaskExample make_memorization(const TaskSpec& s, Rng& rng, const std::vector<std::int32_t>& table) {
  TaskExample ex;
  const std::size_t pairs = (s.seq_len - 1) / 2;
  if ((s.seq_len - 1) % 2) {
    ex.tokens.push_back(s.blank());
    ex.targets.push_back(kIgnore);
  }
  ex.tokens.push_back(s.delimiter());
  ex.targets.push_back(kIgnore);
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::int32_t k = uniform(rng, 0, s.vocab_size / 2);
    ex.tokens.push_back(k);
    ex.targets.push_back(table[static_cast<std::size_t>(k)]);
    ex.tokens.push_back(table[static_cast<std::size_t>(k)]);
    ex.targets.push_back(kIgnore);
  }
  return ex;
}

}  // namespace

std::string_view to_string(TaskKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

TaskKind parse_task_kind(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return static_cast<TaskKind>(i);
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  if (seq_len < 2) throw ConfigError("task: seq_len must be >= 2");
  if (!(frac_noise >= 0.0 && frac_noise <= 1.0)) throw ConfigError("task: frac_noise must be in [0, 1]");
  if (num_train_examples == 0) throw ConfigError("task: num_train_examples must be >= 1");
  switch (kind) {
    case TaskKind::selective_copying:
      if (vocab_size < 1) throw ConfigError("selective-copying: vocab_size must be >= 1");
      if (num_tokens_to_copy < 1 || num_tokens_to_copy >= seq_len ||
          2 * num_tokens_to_copy > seq_len)
        throw ConfigError("selective-copying: need 1 <= num_tokens_to_copy <= seq_len / 2");
      break;
    case TaskKind::memorization:
      if (vocab_size < 2 || vocab_size % 2) throw ConfigError("memorization: vocab_size must be even and >= 2");
      if (seq_len < 3) throw ConfigError("memorization: seq_len must be >= 3");
      break;
    case TaskKind::noisy_recall: {
      if (vocab_size < 2 || vocab_size % 2) throw ConfigError("noisy-recall: vocab_size must be even and >= 2");
      const RecallLayout l = noisy_layout(*this);
      if (l.region == 0 || l.pairs < l.keys)
        throw ConfigError("noisy-recall: seq_len too short for one round of key-value pairs");
      if (l.noise > 0 && noise_vocab_size == 0)
        throw ConfigError("noisy-recall: frac_noise > 0 needs noise_vocab_size >= 1");
      break;
    }
    case TaskKind::fuzzy_recall: {
      if (vocab_size < 4 || vocab_size % 2) throw ConfigError("fuzzy-recall: vocab_size must be even and >= 4");
      if (key_len < 1 || value_len < 1) throw ConfigError("fuzzy-recall: span lengths must be >= 1");
      const FuzzyLayout l = fuzzy_layout(*this);
      if (l.pairs < 1 || l.queries < 1) throw ConfigError("fuzzy-recall: seq_len too short");
      if (std::pow(static_cast<double>(vocab_size / 2), static_cast<double>(key_len)) <
          static_cast<double>(l.pairs))
        throw ConfigError("fuzzy-recall: not enough distinct key spans");
      break;
    }
  }
}

Json to_json(const TaskSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"vocab_size", s.vocab_size},
          {"seq_len", s.seq_len},
          {"num_tokens_to_copy", s.num_tokens_to_copy},
          {"frac_noise", s.frac_noise},
          {"noise_vocab_size", s.noise_vocab_size},
          {"multi_query", s.multi_query},
          {"key_len", s.key_len},
          {"value_len", s.value_len},
          {"num_train_examples", s.num_train_examples},
          {"num_eval_examples", s.num_eval_examples},
          {"seed", s.seed}};
}

TaskSpec task_spec_from_json(const Json& j) {
  require_known_keys(j,
                     {"kind", "vocab_size", "seq_len", "num_tokens_to_copy", "frac_noise",
                      "noise_vocab_size", "multi_query", "key_len", "value_len",
                      "num_train_examples", "num_eval_examples", "seed"},
                     "task");
  TaskSpec s;
  try {
    if (j.contains("kind")) s.kind = parse_task_kind(j["kind"].get<std::string>());
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.seq_len = j.value("seq_len", s.seq_len);
    s.num_tokens_to_copy = j.value("num_tokens_to_copy", s.num_tokens_to_copy);
    s.frac_noise = j.value("frac_noise", s.frac_noise);
    s.noise_vocab_size = j.value("noise_vocab_size", s.noise_vocab_size);
    s.multi_query = j.value("multi_query", s.multi_query);
    s.key_len = j.value("key_len", s.key_len);
    s.value_len = j.value("value_len", s.value_len);
    s.num_train_examples = j.value("num_train_examples", s.num_train_examples);
    s.num_eval_examples = j.value("num_eval_examples", s.num_eval_examples);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<std::int32_t> memorization_table(const TaskSpec& spec) {
  Rng rng(mix(spec.seed ^ 0x6d656d6f72697aULL));
  const std::size_t half = spec.vocab_size / 2;
  std::vector<std::int32_t> table(half);
  for (auto& v : table) v = uniform(rng, half, spec.vocab_size);
  return table;
}

TaskExample generate_example(const TaskSpec& spec, std::uint64_t stream, std::uint64_t index) {
  Rng rng(mix(mix(spec.seed + 0x9e3779b97f4a7c15ULL * (stream + 1)) + index));
  switch (spec.kind) {
    case TaskKind::selective_copying:
      return make_copy(spec, rng);
    case TaskKind::memorization:
      return make_memorization(spec, rng, memorization_table(spec));
    case TaskKind::noisy_recall:
      return make_noisy(spec, rng);
    case TaskKind::fuzzy_recall:
      return make_fuzzy(spec, rng);
  }
  return {};
}

std::uint64_t example_hash(const TaskExample& ex) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (auto t : ex.tokens) {
    for (int b = 0; b < 4; ++b) {
      h ^= static_cast<std::uint8_t>(static_cast<std::uint32_t>(t) >> (8 * b));
      h *= 1099511628211ULL;
    }
  }
  return h;
}

TaskInstance generate(const TaskSpec& spec) {
  spec.validate();
  TaskInstance inst;
  inst.spec = spec;
  std::unordered_set<std::uint64_t> train_hashes;
  for (std::size_t i = 0; i < spec.num_train_examples; ++i) {
    inst.train.push_back(generate_example(spec, 0, i));
    train_hashes.insert(example_hash(inst.train.back()));
  }
  const std::size_t limit = 100 * spec.num_eval_examples + 1000;
  for (std::size_t i = 0; inst.eval.size() < spec.num_eval_examples; ++i) {
    if (i >= limit) throw ConfigError("task: cannot draw enough eval examples disjoint from train");
    TaskExample ex = generate_example(spec, 1, i);
    if (!train_hashes.count(example_hash(ex))) inst.eval.push_back(std::move(ex));
  }
  return inst;
}

std::vector<std::int32_t> oracle_predictions(const TaskSpec& s, const TaskExample& ex) {
  const std::size_t len = ex.tokens.size();
  std::vector<std::int32_t> out(len, kIgnore);
  const std::size_t delim = delimiter_pos(s, ex);
  switch (s.kind) {
    case TaskKind::selective_copying: {
      std::vector<std::int32_t> content;
      for (std::size_t t = 0; t < delim && t < len; ++t)
        if (ex.tokens[t] != s.blank()) content.push_back(ex.tokens[t]);
      for (std::size_t r = 0; delim + r < len && r < content.size(); ++r) out[delim + r] = content[r];
      break;
    }
    case TaskKind::memorization: {
      const auto table = memorization_table(s);
      for (std::size_t t = delim + 1; t < len; t += 2)
        if (is_key(s, ex.tokens[t])) out[t] = table[static_cast<std::size_t>(ex.tokens[t])];
      break;
    }
    case TaskKind::noisy_recall:
      for (std::size_t p = delim + 1; p < len; ++p) {
        std::int32_t found = kIgnore;
        for (std::size_t t = 0; t + 1 < delim; ++t)
          if (ex.tokens[t] == ex.tokens[p] && is_value(s, ex.tokens[t + 1])) {
            if (found != kIgnore && found != ex.tokens[t + 1]) {
              found = -2;  // inconsistent
              break;
            }
            found = ex.tokens[t + 1];
          }
        out[p] = found;
      }
      break;
    case TaskKind::fuzzy_recall: {
      const std::size_t unit = s.key_len + s.value_len - 1;
      for (std::size_t p = delim + 1; p < len; ++p) {
        const std::size_t base = delim + 1 + (p - delim - 1) / unit * unit;
        const std::size_t off = p - base;
        if (off + 1 < s.key_len || base + s.key_len > len) continue;
        const std::size_t value_index = off + 1 - s.key_len;
        std::int32_t found = kIgnore;
        for (std::size_t t = 0; t + s.key_len + s.value_len <= delim; ++t) {
          if (!std::equal(ex.tokens.begin() + static_cast<long>(t),
                          ex.tokens.begin() + static_cast<long>(t + s.key_len),
                          ex.tokens.begin() + static_cast<long>(base)))
            continue;
          const std::int32_t v = ex.tokens[t + s.key_len + value_index];
          if (!is_value(s, v)) continue;
          if (found != kIgnore && found != v) {
            found = -2;
            break;
          }
          found = v;
        }
        out[p] = found;
      }
      break;
    }
  }
  return out;
}

std::optional<std::string> check_example(const TaskSpec& s, const TaskExample& ex) {
  if (ex.tokens.size() != s.seq_len || ex.targets.size() != s.seq_len)
    return "length differs from seq_len";
  const std::size_t delim = delimiter_pos(s, ex);
  if (delim >= ex.tokens.size()) return "missing delimiter";
  for (auto t : ex.tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= s.total_vocab()) return "token out of range";
  const auto pred = oracle_predictions(s, ex);
  std::size_t supervised = 0;
  for (std::size_t p = 0; p < ex.targets.size(); ++p) {
    if (ex.targets[p] == kIgnore) continue;
    ++supervised;
    if (p < delim) return "target inside the context region at " + std::to_string(p);
    if (pred[p] == -2) return "ambiguous prefix at " + std::to_string(p);
    if (pred[p] != ex.targets[p])
      return "target at " + std::to_string(p) + " not determined by the prefix";
  }
  if (supervised == 0) return "no supervised positions";
  return std::nullopt;
}

}  // namespace cdyn
