#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdyn/core/serialize.hpp"

// Synthetic token tasks. Token ids are laid out as
//   [0, vocab_size)                          content (keys, values, copy symbols)
//   [vocab_size, vocab_size + noise)         noise vocabulary
//   delimiter, blank                         two special tokens
// Every sequence is [context region][delimiter][query block]; targets are -1
// except at supervised positions.

namespace cdyn {

enum class TaskKind { selective_copying, memorization, noisy_recall, fuzzy_recall };
std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

constexpr std::int32_t kIgnore = -1;

struct TaskSpec {
  TaskKind kind = TaskKind::noisy_recall;
  std::size_t vocab_size = 8;
  std::size_t seq_len = 32;
  std::size_t num_tokens_to_copy = 4;  // selective copying
  double frac_noise = 0.2;             // noisy recall
  std::size_t noise_vocab_size = 4;
  bool multi_query = true;
  std::size_t key_len = 2;  // fuzzy recall span lengths
  std::size_t value_len = 2;
  std::size_t num_train_examples = 512;
  std::size_t num_eval_examples = 128;
  std::uint64_t seed = 0;

  std::int32_t delimiter() const { return static_cast<std::int32_t>(vocab_size + noise_vocab_size); }
  std::int32_t blank() const { return delimiter() + 1; }
  std::size_t total_vocab() const { return vocab_size + noise_vocab_size + 2; }
  /// Throws ConfigError on an infeasible spec.
  void validate() const;
};

Json to_json(const TaskSpec& s);
TaskSpec task_spec_from_json(const Json& j);

struct TaskExample {
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> targets;
  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskInstance {
  TaskSpec spec;
  std::vector<TaskExample> train;
  std::vector<TaskExample> eval;
};

/// Deterministic in spec (including seed). Eval examples come from a separate
/// seed stream and any whose hash matches a train example are redrawn.
TaskInstance generate(const TaskSpec& spec);
/// One example from an explicit stream index; used by generate().
TaskExample generate_example(const TaskSpec& spec, std::uint64_t stream, std::uint64_t index);

/// The fixed key -> value table of the memorization task.
std::vector<std::int32_t> memorization_table(const TaskSpec& spec);

/// Independent scan: every supervised target must follow from the prefix
/// alone. Returns a description of the first violation.
std::optional<std::string> check_example(const TaskSpec& spec, const TaskExample& ex);

/// What a perfect solver emits, derived from the prefix alone.
std::vector<std::int32_t> oracle_predictions(const TaskSpec& spec, const TaskExample& ex);

std::uint64_t example_hash(const TaskExample& ex);

void write_binary(std::ostream& os, const TaskInstance& inst);
TaskInstance read_binary(std::istream& is);
void write_jsonl(std::ostream& os, const TaskInstance& inst);

}  // namespace cdyn
