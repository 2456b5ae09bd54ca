#include "dgm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace dgm::checkpoint {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'G', 'M', 'C', 'K', 'P', 'T', '\0'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (!has(n)) throw FormatError("checkpoint truncated while reading " + what);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

json shapes_of(const Model& model) {
  json shapes = json::array();
  for (const Tensor* p : parameters(model)) shapes.push_back(p->shape());
  return shapes;
}

}  // namespace

std::vector<std::uint8_t> encode(const Checkpoint& ckpt) {
  const json header{
      {"format_version", kFormatVersion},
      {"model", model_kind(ckpt.model)},
      {"ambient_dim", ckpt.ambient_dim},
      {"config", json::parse(config::to_json(ckpt.config))},
      {"shapes", shapes_of(ckpt.model)},
      {"rng", ckpt.rng_state},
      {"epochs_run", ckpt.epochs_run},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kFormatVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const auto params = parameters(ckpt.model);
  put_u64(out, params.size());
  for (const Tensor* p : params) {
    put_u64(out, p->size());
    for (double v : p->data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  Cursor cur(bytes);
  const auto magic = cur.take(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint file (bad magic)");
  const std::uint32_t version = cur.u32("format version");
  if (version != kFormatVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  const std::uint64_t header_len = cur.u64("header length");
  const auto header_bytes = cur.take(header_len, "header");

  json header;
  try {
    header = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  std::string kind;
  json shapes;
  try {
    if (header.at("format_version").get<std::uint32_t>() != version)
      throw FormatError("checkpoint header version disagrees with the file version");
    kind = header.at("model").get<std::string>();
    ckpt.ambient_dim = header.at("ambient_dim").get<std::size_t>();
    ckpt.config = config::from_json(header.at("config").dump());
    shapes = header.at("shapes");
    ckpt.rng_state = header.at("rng").get<std::string>();
    ckpt.epochs_run = header.at("epochs_run").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config echo is invalid: ") + e.what());
  }
  if (kind != "vae" && kind != "flow") throw FormatError("checkpoint header names unknown model kind '" + kind + "'");

  config::ExperimentConfig build_cfg = ckpt.config;
  build_cfg.model = kind;
  try {
    ckpt.model = config::build_model(build_cfg, ckpt.ambient_dim);
  } catch (const Error& e) {
    throw FormatError("cannot rebuild '" + kind + "' model from checkpoint header: " + e.what());
  }
  const json expected = shapes_of(ckpt.model);
  if (shapes != expected)
    throw FormatError("structural mismatch: header model kind '" + kind + "' implies " + std::to_string(expected.size()) +
                      " parameter blobs with shapes " + expected.dump() + " but the header declares " + shapes.dump());
  if (kind != ckpt.config.model)
    throw FormatError("structural mismatch: header model kind '" + kind + "' disagrees with config model '" +
                      ckpt.config.model + "'");

  const auto params = parameters(ckpt.model);
  const std::uint64_t count = cur.u64("blob count");
  if (count != params.size())
    throw FormatError("structural mismatch: payload holds " + std::to_string(count) + " blobs but model kind '" + kind +
                      "' needs " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = "blob " + std::to_string(i);
    const std::uint64_t n = cur.u64(name + " length");
    if (n != params[i]->size())
      throw FormatError(name + ": declared length " + std::to_string(n) + " does not match shape " +
                        shape_str(params[i]->shape()));
    if (!cur.has(n * 8))
      throw FormatError("truncated payload in " + name + ": expected " + std::to_string(n * 8) + " bytes, found " +
                        std::to_string(cur.remaining()));
    for (double& v : params[i]->data()) v = std::bit_cast<double>(cur.u64(name));
  }
  if (cur.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(cur.remaining()) + " trailing bytes");
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

void save(const Model& model, const config::ExperimentConfig& config, const std::filesystem::path& path,
          const std::string& rng_state, std::size_t epochs_run) {
  save(Checkpoint{config, ambient_dim(model), model, rng_state, epochs_run}, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace dgm::checkpoint
