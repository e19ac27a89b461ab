#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "cdyn/errors.hpp"
#include "cdyn/tasks/tasks.hpp"

using namespace cdyn;

namespace {

TaskSpec spec_of(TaskKind k) {
  TaskSpec s;
  s.kind = k;
  s.num_train_examples = 64;
  s.num_eval_examples = 32;
  if (k == TaskKind::selective_copying) s.vocab_size = 16;
  return s;
}

const TaskKind kKinds[] = {TaskKind::selective_copying, TaskKind::memorization, TaskKind::noisy_recall,
                           TaskKind::fuzzy_recall};

}  // namespace

TEST_CASE("task names round trip") {
  for (auto k : kKinds) CHECK(parse_task_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_task_kind("copying"), ConfigError);
}

TEST_CASE("every generated example is well posed and solvable from its prefix") {
  for (auto k : kKinds) {
    CAPTURE(to_string(k));
    const TaskSpec s = spec_of(k);
    const TaskInstance inst = generate(s);
    CHECK(inst.train.size() == s.num_train_examples);
    CHECK(inst.eval.size() == s.num_eval_examples);
    for (const auto* split : {&inst.train, &inst.eval})
      for (const auto& ex : *split) {
        CHECK(ex.tokens.size() == s.seq_len);
        CHECK(ex.targets.size() == s.seq_len);
        const auto err = check_example(s, ex);
        CHECK_MESSAGE(!err, (err ? *err : ""));
        const auto pred = oracle_predictions(s, ex);
        for (std::size_t t = 0; t < ex.targets.size(); ++t)
          if (ex.targets[t] >= 0) CHECK(pred[t] == ex.targets[t]);
        for (auto tok : ex.tokens) CHECK(static_cast<std::size_t>(tok) < s.total_vocab());
      }
  }
}

TEST_CASE("generation is deterministic and seed dependent") {
  for (auto k : kKinds) {
    TaskSpec s = spec_of(k);
    const auto a = generate(s), b = generate(s);
    CHECK(a.train == b.train);
    CHECK(a.eval == b.eval);
    s.seed = 1;
    if (k != TaskKind::memorization) CHECK(generate(s).train != a.train);
  }
}

TEST_CASE("train and eval splits do not share examples") {
  for (auto k : kKinds) {
    const auto inst = generate(spec_of(k));
    std::set<std::uint64_t> seen;
    for (const auto& ex : inst.train) seen.insert(example_hash(ex));
    for (const auto& ex : inst.eval) CHECK(seen.count(example_hash(ex)) == 0);
  }
}

TEST_CASE("noisy recall: queried keys carry their in-context value") {
  const TaskSpec s = spec_of(TaskKind::noisy_recall);
  for (const auto& ex : generate(s).train) {
    const auto delim = std::find(ex.tokens.begin(), ex.tokens.end(), s.delimiter()) - ex.tokens.begin();
    std::map<std::int32_t, std::int32_t> table;
    std::size_t noise = 0;
    for (std::ptrdiff_t t = 0; t + 1 < delim; ++t) {
      const auto tok = ex.tokens[t];
      if (tok >= std::int32_t(s.vocab_size) && tok < s.delimiter()) ++noise;
      if (tok >= 0 && tok < std::int32_t(s.vocab_size / 2)) {
        const auto v = ex.tokens[t + 1];
        CHECK(v >= std::int32_t(s.vocab_size / 2));
        CHECK(v < std::int32_t(s.vocab_size));
        if (table.count(tok)) CHECK(table[tok] == v);
        table[tok] = v;
      }
    }
    CHECK(noise > 0);
    for (std::size_t t = delim + 1; t < ex.tokens.size(); ++t) {
      REQUIRE(table.count(ex.tokens[t]));
      CHECK(ex.targets[t] == table[ex.tokens[t]]);
    }
  }
}

TEST_CASE("noisy recall places padding after the pairs") {
  const TaskSpec s = spec_of(TaskKind::noisy_recall);
  for (const auto& ex : generate(s).train) CHECK(ex.tokens.front() != s.blank());
}

TEST_CASE("noisy recall without noise has no noise tokens") {
  TaskSpec s = spec_of(TaskKind::noisy_recall);
  s.frac_noise = 0.0;
  for (const auto& ex : generate(s).train)
    for (auto tok : ex.tokens) CHECK_FALSE((tok >= std::int32_t(s.vocab_size) && tok < s.delimiter()));
}

TEST_CASE("memorization uses one fixed table across examples") {
  const TaskSpec s = spec_of(TaskKind::memorization);
  const auto table = memorization_table(s);
  for (const auto& ex : generate(s).train)
    for (std::size_t t = 0; t < ex.tokens.size(); ++t)
      if (ex.targets[t] >= 0) CHECK(ex.targets[t] == table.at(ex.tokens[t]));
}

TEST_CASE("selective copying emits the content tokens in order") {
  const TaskSpec s = spec_of(TaskKind::selective_copying);
  for (const auto& ex : generate(s).train) {
    const auto delim = std::find(ex.tokens.begin(), ex.tokens.end(), s.delimiter()) - ex.tokens.begin();
    std::vector<std::int32_t> content, emitted;
    for (std::ptrdiff_t t = 0; t < delim; ++t)
      if (ex.tokens[t] < std::int32_t(s.vocab_size)) content.push_back(ex.tokens[t]);
    for (auto t : ex.targets)
      if (t >= 0) emitted.push_back(t);
    CHECK(content.size() == s.num_tokens_to_copy);
    CHECK(emitted == content);
  }
}

TEST_CASE("infeasible specs are rejected") {
  TaskSpec s;
  s.vocab_size = 7;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.vocab_size = 8;
  s.seq_len = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.seq_len = 32;
  s.noise_vocab_size = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("task json rejects unknown keys") {
  const TaskSpec s = spec_of(TaskKind::fuzzy_recall);
  const TaskSpec back = task_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  Json j = to_json(s);
  j["vocab"] = 4;
  CHECK_THROWS_AS(task_spec_from_json(j), ConfigError);
}

TEST_CASE("binary and jsonl exports") {
  const TaskInstance inst = generate(spec_of(TaskKind::noisy_recall));
  std::stringstream bin;
  write_binary(bin, inst);
  const TaskInstance back = read_binary(bin);
  CHECK(back.train == inst.train);
  CHECK(back.eval == inst.eval);
  CHECK(to_json(back.spec) == to_json(inst.spec));

  std::ostringstream js;
  write_jsonl(js, inst);
  const auto text = js.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == long(1 + inst.train.size() + inst.eval.size()));

  std::stringstream junk("not a task file");
  CHECK_THROWS(read_binary(junk));
}
