#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "palm/adam.hpp"
#include "palm/errors.hpp"

namespace palm {

// PALMW1 container:
//   "PALMW1\n"
//   u64 little-endian JSON byte length
//   JSON: {"arch": {...}, "tensors": [{"name","shape","offset","len"}, ...]}
//   raw little-endian float32 payload, offsets relative to payload start
struct WeightsFile {
  nlohmann::json arch;
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
  };
  std::vector<Entry> tensors;

  const Entry& at(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return e;
    throw DataError("weights file has no tensor named " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return true;
    return false;
  }
};

inline void save_weights(const std::filesystem::path& path, const WeightsFile& wf) {
  nlohmann::json index;
  index["arch"] = wf.arch;
  index["tensors"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : wf.tensors) {
    uint64_t len = static_cast<uint64_t>(e.data.size()) * sizeof(float);
    index["tensors"].push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"len", len}});
    offset += len;
  }
  std::string js = index.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "PALMW1\n";
  uint64_t jlen = js.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((jlen >> (8 * i)) & 0xFF);
  out.write(lenbuf, 8);
  out.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& e : wf.tensors)
    out.write(reinterpret_cast<const char*>(e.data.data()), static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path.string());
}

inline WeightsFile load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weights file: " + path.string());
  std::string magic(7, '\0');
  in.read(magic.data(), 7);
  if (!in || magic != "PALMW1\n") throw DataError("not a PALMW1 file: " + path.string());
  char lenbuf[8];
  in.read(lenbuf, 8);
  if (!in) throw DataError("truncated weights header: " + path.string());
  uint64_t jlen = 0;
  for (int i = 0; i < 8; ++i) jlen |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
  std::string js(jlen, '\0');
  in.read(js.data(), static_cast<std::streamsize>(jlen));
  if (!in) throw DataError("truncated weights index: " + path.string());
  nlohmann::json index = nlohmann::json::parse(js);

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  WeightsFile wf;
  wf.arch = index.value("arch", nlohmann::json::object());
  for (const auto& t : index.at("tensors")) {
    WeightsFile::Entry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<int>>();
    uint64_t offset = t.at("offset").get<uint64_t>();
    uint64_t len = t.at("len").get<uint64_t>();
    if (offset + len > payload.size()) throw DataError("tensor " + e.name + " overruns payload in " + path.string());
    e.data.resize(len / sizeof(float));
    std::memcpy(e.data.data(), payload.data() + offset, len);
    size_t n = 1;
    for (int d : e.shape) n *= static_cast<size_t>(d);
    if (n != e.data.size()) throw DataError("tensor " + e.name + " shape does not match payload length");
    wf.tensors.push_back(std::move(e));
  }
  return wf;
}

// Store <-> file bridges. The payload is always float32; double stores are
// narrowed on save and widened on load.
template <typename T>
void append_store(WeightsFile& wf, const ParamStore<T>& params) {
  for (const auto& p : params.items()) {
    WeightsFile::Entry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.data.assign(p.tensor.values().begin(), p.tensor.values().end());
    wf.tensors.push_back(std::move(e));
  }
}

template <typename T>
void load_into_store(const WeightsFile& wf, ParamStore<T>& params) {
  for (auto& p : params.items()) {
    const auto& e = wf.at(p.name);
    if (e.shape != p.tensor.shape())
      throw DataError("tensor " + p.name + " has shape " + shape_str(e.shape) + ", expected " +
                      shape_str(p.tensor.shape()));
    std::copy(e.data.begin(), e.data.end(), p.tensor.values().begin());
  }
}

}  // namespace palm
