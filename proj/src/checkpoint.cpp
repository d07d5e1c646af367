#include "readlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "readlab/rng.hpp"

namespace readlab::checkpoint {

using nlohmann::json;

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_tensors(const std::filesystem::path& dir, std::span<const NamedTensor> tensors) {
  std::filesystem::create_directories(dir);
  std::string payload;
  json entries = json::array();
  for (const NamedTensor& t : tensors) {
    const std::size_t bytes = static_cast<std::size_t>(t.value.size()) * sizeof(double);
    entries.push_back({{"name", t.name},
                       {"rows", t.value.rows()},
                       {"cols", t.value.cols()},
                       {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t.value.data()), bytes);
  }
  const json manifest = {{"format", "readlab-tensors"},
                         {"version", kFormatVersion},
                         {"checksum", hex64(fnv1a64(payload))},
                         {"tensors", entries}};
  write_atomic(dir / "tensors.bin", payload);
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
  const json manifest = json::parse(mf);
  if (manifest.value("format", "") != "readlab-tensors" || manifest.value("version", 0) != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint format in " + dir.string());

  std::ifstream bf(dir / "tensors.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("missing tensors.bin in " + dir.string());
  std::ostringstream ss;
  ss << bf.rdbuf();
  const std::string payload = ss.str();
  if (hex64(fnv1a64(payload)) != manifest.at("checksum").get<std::string>())
    throw std::runtime_error("checkpoint checksum mismatch in " + dir.string());

  std::vector<NamedTensor> out;
  for (const json& e : manifest.at("tensors")) {
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (offset + bytes > payload.size()) throw std::runtime_error("checkpoint tensor out of bounds");
    NamedTensor t{e.at("name").get<std::string>(), nn::Mat(rows, cols)};
    std::memcpy(t.value.data(), payload.data() + offset, bytes);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<NamedTensor> snapshot(const nn::ParamList& params, const std::string& prefix) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const nn::Param* p : params) out.push_back({prefix + p->name, p->value});
  return out;
}

void restore(const nn::ParamList& params, std::span<const NamedTensor> tensors,
             const std::string& prefix) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& t : tensors) by_name[t.name] = &t;
  for (nn::Param* p : params) {
    auto it = by_name.find(prefix + p->name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks tensor " + prefix + p->name);
    const nn::Mat& v = it->second->value;
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw std::runtime_error("shape mismatch for tensor " + prefix + p->name);
    p->value = v;
  }
}

}  // namespace readlab::checkpoint
