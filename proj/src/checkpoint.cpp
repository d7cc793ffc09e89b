#include <bit>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void write_le(std::ostream& os, T value) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<Bits>(value);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(const unsigned char* p) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

// Tensor names may contain dots; keep file names flat and portable.
std::string payload_name(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
  return out + ".bin";
}

}  // namespace

void save_tensors(const fs::path& dir, const std::map<std::string, const Tensor*>& tensors,
                  const std::string& extra_json) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "vqgraph-tensors/1";
  manifest["dtype"] = scalar_name();
  manifest["extra"] = json::parse(extra_json);
  json entries = json::array();
  for (const auto& [name, t] : tensors) {
    const std::string file = payload_name(name);
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    for (Scalar v : t->values()) write_le(out, v);
    entries.push_back({{"name", name}, {"shape", t->shape()}, {"file", file}});
  }
  manifest["tensors"] = std::move(entries);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

namespace {

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing checkpoint manifest: " + (dir / "manifest.json").string());
  return json::parse(in);
}

}  // namespace

std::map<std::string, Tensor> load_tensors(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  const std::string dtype = manifest.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") throw std::runtime_error("unsupported checkpoint dtype " + dtype);
  const std::size_t width = dtype == "f64" ? 8 : 4;
  std::map<std::string, Tensor> out;
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw std::runtime_error("checkpoint tensors must be 2-D");
    const fs::path path = dir / entry.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing tensor payload " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t count = shape[0] * shape[1];
    if (bytes.size() != count * width) throw std::runtime_error("payload size mismatch in " + path.string());
    Tensor t(shape[0], shape[1]);
    auto v = t.values();
    for (std::size_t i = 0; i < count; ++i) {
      v[i] = width == 8 ? static_cast<Scalar>(read_le<double>(bytes.data() + 8 * i))
                        : static_cast<Scalar>(read_le<float>(bytes.data() + 4 * i));
    }
    out.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

std::string load_manifest_extra(const fs::path& dir) { return read_manifest(dir).value("extra", json::object()).dump(); }

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
