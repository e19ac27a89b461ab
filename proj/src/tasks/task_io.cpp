#include <cstring>
#include <istream>
#include <ostream>

#include "cdyn/errors.hpp"
#include "cdyn/tasks/tasks.hpp"

// Binary container, little-endian host order:
//   8 bytes  magic "CDYNTASK"
//   u32      version (1)
//   u32      header length, then that many bytes of JSON {"spec": ..., "train": N, "eval": M}
//   per example (train first, then eval):
//     u32 length, i32 tokens[length], i32 targets[length]

namespace cdyn {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'Y', 'N', 'T', 'A', 'S', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ConfigError("task file: truncated");
  return v;
}

void put_example(std::ostream& os, const TaskExample& ex) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ex.tokens.size()));
  os.write(reinterpret_cast<const char*>(ex.tokens.data()),
           static_cast<std::streamsize>(ex.tokens.size() * sizeof(std::int32_t)));
  os.write(reinterpret_cast<const char*>(ex.targets.data()),
           static_cast<std::streamsize>(ex.targets.size() * sizeof(std::int32_t)));
}

TaskExample get_example(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  TaskExample ex;
  ex.tokens.resize(n);
  ex.targets.resize(n);
  const auto bytes = static_cast<std::streamsize>(n * sizeof(std::int32_t));
  if (!is.read(reinterpret_cast<char*>(ex.tokens.data()), bytes) ||
      !is.read(reinterpret_cast<char*>(ex.targets.data()), bytes))
    throw ConfigError("task file: truncated example");
  return ex;
}

}  // namespace

void write_binary(std::ostream& os, const TaskInstance& inst) {
  const std::string header =
      Json{{"spec", to_json(inst.spec)}, {"train", inst.train.size()}, {"eval", inst.eval.size()}}
          .dump();
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& ex : inst.train) put_example(os, ex);
  for (const auto& ex : inst.eval) put_example(os, ex);
}

TaskInstance read_binary(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ConfigError("task file: bad magic");
  if (get<std::uint32_t>(is) != kVersion) throw ConfigError("task file: unsupported version");
  const auto hlen = get<std::uint32_t>(is);
  std::string header(hlen, '\0');
  if (!is.read(header.data(), hlen)) throw ConfigError("task file: truncated header");
  Json h;
  try {
    h = Json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("task file: bad header: ") + e.what());
  }
  TaskInstance inst;
  inst.spec = task_spec_from_json(h.at("spec"));
  const auto ntrain = h.at("train").get<std::size_t>();
  const auto neval = h.at("eval").get<std::size_t>();
  for (std::size_t i = 0; i < ntrain; ++i) inst.train.push_back(get_example(is));
  for (std::size_t i = 0; i < neval; ++i) inst.eval.push_back(get_example(is));
  return inst;
}

void write_jsonl(std::ostream& os, const TaskInstance& inst) {
  os << Json{{"spec", to_json(inst.spec)}}.dump() << '\n';
  for (const auto* split : {&inst.train, &inst.eval}) {
    const char* name = split == &inst.train ? "train" : "eval";
    for (const auto& ex : *split)
      os << Json{{"split", name}, {"tokens", ex.tokens}, {"targets", ex.targets}}.dump() << '\n';
  }
}

}  // namespace cdyn
