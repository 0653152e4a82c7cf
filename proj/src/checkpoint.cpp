#include "e2pn/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "e2pn/error.hpp"
#include "json.hpp"

namespace e2pn {

static_assert(std::endian::native == std::endian::little, "checkpoint buffers are written in native order");

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const NamedTensors& state) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  nlohmann::json manifest;
  manifest["format"] = "e2pn-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write checkpoint '" + with_ext(stem, ".bin").string() + "'");
  std::size_t offset = 0;
  for (const auto& [name, t] : state) {
    const auto v = t.values();
    bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += v.size();
  }
  manifest["total_values"] = offset;
  if (!bin) throw Error("failed writing checkpoint buffers");
  std::ofstream(with_ext(stem, ".json"), std::ios::trunc) << manifest.dump(2) << "\n";
}

void load_checkpoint(const std::filesystem::path& stem, const NamedTensors& state) {
  const auto bin_path = with_ext(stem, ".bin"), json_path = with_ext(stem, ".json");
  for (const auto& p : {bin_path, json_path})
    if (!std::filesystem::exists(p)) throw CheckpointMissing("'" + p.string() + "' does not exist");
  nlohmann::json manifest;
  try {
    std::ifstream(json_path) >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ShapeMismatch("unreadable checkpoint manifest: " + std::string(e.what()));
  }
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != state.size())
    throw ShapeMismatch("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                        std::to_string(state.size()));
  const std::size_t total = manifest.at("total_values").get<std::size_t>();
  if (std::filesystem::file_size(bin_path) != total * sizeof(double))
    throw ShapeMismatch("checkpoint buffer size does not match its manifest");
  std::ifstream bin(bin_path, std::ios::binary);
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& entry = tensors[i];
    const auto& [name, t] = state[i];
    const auto shape = entry.at("shape").get<ag::Shape>();
    if (entry.at("name").get<std::string>() != name || shape != t.shape())
      throw ShapeMismatch("checkpoint entry " + std::to_string(i) + " is " + entry.at("name").get<std::string>() +
                          ag::to_string(shape) + ", model expects " + name + ag::to_string(t.shape()));
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    auto v = ag::Tensor(t).mutable_values();
    bin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!bin) throw ShapeMismatch("truncated checkpoint buffer");
  }
}

}  // namespace e2pn
