#include "coe/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace coe {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes host-order floats and assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'O', 'E', 'C', 'K', 'P', 'T', '\0'};

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw CheckpointError("malformed number '" + s + "' in checkpoint header");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw CheckpointError("malformed integer '" + s + "' in checkpoint header");
  return v;
}

// One network plus its optimizer state, under a name prefix.
template <typename Net, typename Adam>
struct Group {
  std::string prefix;  // "expert3" or "gate"
  Net* net;
  Adam* adam;
};

template <typename C>
auto groups_of(C& ckpt) {
  using Net = std::remove_reference_t<decltype(ckpt.experts[0].network())>;
  using Adam = std::remove_reference_t<decltype(ckpt.experts[0].optimizer())>;
  std::vector<Group<Net, Adam>> groups;
  for (std::size_t j = 0; j < ckpt.experts.size(); ++j)
    groups.push_back({"expert" + std::to_string(j), &ckpt.experts[j].network(), &ckpt.experts[j].optimizer()});
  if (ckpt.gate) groups.push_back({"gate", &ckpt.gate->network(), &ckpt.gate->optimizer()});
  return groups;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw CheckpointError(path.string() + ": cannot open for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename U>
  void pod(U v) {
    bytes(&v, sizeof v);
  }
  void array(const std::string& name, const Tensor& t) {
    pod(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    pod(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) pod(static_cast<std::uint64_t>(d));
    bytes(t.data(), t.size() * sizeof(float));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw CheckpointError(path.string() + ": write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), where_(path.string()) {
    if (!in_) throw CheckpointError(where_ + ": cannot open for reading");
  }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw CheckpointTruncatedError(where_ + ": truncated while reading " + what);
  }
  template <typename U>
  U pod(const char* what) {
    U v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    if (n > (1u << 26)) throw CheckpointError(where_ + ": implausible " + std::string(what) + " length");
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  const std::string& where() const { return where_; }

 private:
  std::ifstream in_;
  std::string where_;
};

struct RawHeader {
  std::map<std::string, std::string> kv;
  std::uint32_t array_count = 0;
};

RawHeader read_preamble(Reader& r) {
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(r.where() + ": not a checkpoint file");
  const auto version = r.pod<std::uint32_t>("format version");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError(r.where() + ": checkpoint format version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kCheckpointVersion));
  const auto header_len = r.pod<std::uint64_t>("header length");
  const std::string text = r.str(static_cast<std::size_t>(header_len), "header");
  RawHeader h;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(r.where() + ": malformed header line '" + line + "'");
    h.kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  h.array_count = r.pod<std::uint32_t>("array count");
  return h;
}

const std::string& require(const RawHeader& h, const std::string& key) {
  auto it = h.kv.find(key);
  if (it == h.kv.end()) throw CheckpointError("checkpoint header lacks key '" + key + "'");
  return it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  kv["expert_config"] = ckpt.expert_config.name();
  kv["n_experts"] = std::to_string(ckpt.experts.size());
  kv["gate_outputs"] = std::to_string(ckpt.gate ? ckpt.gate->n_experts() : 0);
  kv["epoch"] = std::to_string(ckpt.epoch);
  kv["seed"] = std::to_string(ckpt.seed);
  for (int i = 0; i < 4; ++i) kv["rng.s" + std::to_string(i)] = std::to_string(ckpt.rng_state.s[i]);
  kv["rng.has_spare"] = ckpt.rng_state.has_spare ? "1" : "0";
  kv["rng.spare"] = hex_double(ckpt.rng_state.spare);
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("metadata entry '" + k + "' contains '=' or a newline");
    kv["meta." + k] = v;
  }

  std::uint32_t n_arrays = 0;
  for (const auto& g : groups_of(ckpt)) {
    if (g.adam->size() != g.net->params().size())
      throw CheckpointError(g.prefix + ": optimizer state count does not match parameters");
    const AdamState& first = g.adam->front();
    kv[g.prefix + ".lr"] = hex_double(first.lr);
    kv[g.prefix + ".beta1"] = hex_double(first.beta1);
    kv[g.prefix + ".beta2"] = hex_double(first.beta2);
    kv[g.prefix + ".eps"] = hex_double(first.eps);
    for (std::size_t i = 0; i < g.adam->size(); ++i)
      kv[g.prefix + ".steps." + g.net->param_names()[i]] = std::to_string((*g.adam)[i].step_count);
    n_arrays += static_cast<std::uint32_t>(3 * g.net->params().size());
  }

  std::string header;
  for (const auto& [k, v] : kv) header += k + "=" + v + "\n";

  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint64_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.pod(n_arrays);
  for (const auto& g : groups_of(ckpt)) {
    const auto& names = g.net->param_names();
    for (std::size_t i = 0; i < names.size(); ++i) w.array(g.prefix + "/" + names[i], g.net->params()[i]);
    for (std::size_t i = 0; i < names.size(); ++i) w.array(g.prefix + "/adam_m/" + names[i], (*g.adam)[i].m);
    for (std::size_t i = 0; i < names.size(); ++i) w.array(g.prefix + "/adam_v/" + names[i], (*g.adam)[i].v);
  }
  w.finish(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  const RawHeader h = read_preamble(r);

  Checkpoint ckpt;
  ckpt.expert_config = ExpertConfig::parse(require(h, "expert_config"));
  const auto n_experts = parse_u64(require(h, "n_experts"));
  const auto gate_outputs = parse_u64(require(h, "gate_outputs"));
  ckpt.epoch = parse_u64(require(h, "epoch"));
  ckpt.seed = parse_u64(require(h, "seed"));
  for (int i = 0; i < 4; ++i) ckpt.rng_state.s[i] = parse_u64(require(h, "rng.s" + std::to_string(i)));
  ckpt.rng_state.has_spare = require(h, "rng.has_spare") == "1";
  ckpt.rng_state.spare = parse_double(require(h, "rng.spare"));
  for (const auto& [k, v] : h.kv)
    if (k.rfind("meta.", 0) == 0) ckpt.metadata[k.substr(5)] = v;

  for (std::uint64_t j = 0; j < n_experts; ++j)
    ckpt.experts.emplace_back(ckpt.expert_config, Network<float>(ckpt.expert_config.layers()));
  if (gate_outputs > 0)
    ckpt.gate.emplace(static_cast<int>(gate_outputs), Network<float>(gate_layers(static_cast<int>(gate_outputs))));

  // Expected name -> destination tensor.
  std::map<std::string, Tensor*> slots;
  for (auto& g : groups_of(ckpt)) {
    auto& adam = *g.adam;
    const auto& names = g.net->param_names();
    for (auto& s : adam) {
      s.lr = parse_double(require(h, g.prefix + ".lr"));
      s.beta1 = parse_double(require(h, g.prefix + ".beta1"));
      s.beta2 = parse_double(require(h, g.prefix + ".beta2"));
      s.eps = parse_double(require(h, g.prefix + ".eps"));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      adam[i].step_count = parse_u64(require(h, g.prefix + ".steps." + names[i]));
      slots[g.prefix + "/" + names[i]] = &g.net->params()[i];
      slots[g.prefix + "/adam_m/" + names[i]] = &adam[i].m;
      slots[g.prefix + "/adam_v/" + names[i]] = &adam[i].v;
    }
  }
  if (h.array_count != slots.size())
    throw CheckpointError(r.where() + ": file holds " + std::to_string(h.array_count) + " arrays, architecture needs " +
                          std::to_string(slots.size()));

  std::map<std::string, bool> seen;
  for (std::uint32_t a = 0; a < h.array_count; ++a) {
    const std::string name = r.str(r.pod<std::uint32_t>("array name length"), "array name");
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError(r.where() + ": unexpected array '" + name + "'");
    if (seen[name]) throw CheckpointError(r.where() + ": duplicate array '" + name + "'");
    seen[name] = true;
    const auto rank = r.pod<std::uint32_t>("array rank");
    if (rank > 8) throw CheckpointShapeError(r.where() + ": array '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>("array dims"));
    Tensor& dst = *it->second;
    if (shape != dst.shape())
      throw CheckpointShapeError(r.where() + ": array '" + name + "' has shape " + shape_str(shape) +
                                 " but the declared architecture needs " + shape_str(dst.shape()));
    r.bytes(dst.data(), dst.size() * sizeof(float), ("data of '" + name + "'").c_str());
  }
  return ckpt;
}

std::vector<std::string> checkpoint_array_names(const std::filesystem::path& path) {
  Reader r(path);
  const RawHeader h = read_preamble(r);
  std::vector<std::string> names;
  for (std::uint32_t a = 0; a < h.array_count; ++a) {
    names.push_back(r.str(r.pod<std::uint32_t>("array name length"), "array name"));
    const auto rank = r.pod<std::uint32_t>("array rank");
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) numel *= static_cast<std::size_t>(r.pod<std::uint64_t>("array dims"));
    std::vector<char> skip(numel * sizeof(float));
    r.bytes(skip.data(), skip.size(), "array data");
  }
  return names;
}

}  // namespace coe
