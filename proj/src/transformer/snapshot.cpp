#include <bit>
#include <cstdint>
#include <fstream>
#include <json.hpp>

#include "normlab/error.hpp"
#include "normlab/transformer.hpp"

namespace normlab::tf {

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

}  // namespace

void save_snapshot(const ParameterSet& params, const std::filesystem::path& stem) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "f64le";
  manifest["groups"] = nlohmann::ordered_json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw ContractError("cannot write " + with_ext(stem, ".bin").string());
  std::size_t offset = 0;
  for (const auto& [name, t] : params.groups()) {
    manifest["groups"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    for (double v : t.data()) {
      const std::uint64_t word = to_le(std::bit_cast<std::uint64_t>(v));
      bin.write(reinterpret_cast<const char*>(&word), sizeof word);
    }
    offset += t.size();
  }
  manifest["count"] = offset;
  std::ofstream js(with_ext(stem, ".json"));
  if (!js) throw ContractError("cannot write " + with_ext(stem, ".json").string());
  js << manifest.dump(2) << '\n';
}

ParameterSet load_snapshot(const std::filesystem::path& stem) {
  std::ifstream js(with_ext(stem, ".json"));
  if (!js) throw ContractError("cannot read " + with_ext(stem, ".json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError("snapshot manifest: " + std::string(e.what()));
  }
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw ContractError("cannot read " + with_ext(stem, ".bin").string());
  std::vector<double> flat;
  std::uint64_t word = 0;
  while (bin.read(reinterpret_cast<char*>(&word), sizeof word)) flat.push_back(std::bit_cast<double>(to_le(word)));

  ParameterSet out;
  for (const auto& g : manifest.at("groups")) {
    const Shape shape = g.at("shape").get<Shape>();
    const std::size_t offset = g.at("offset").get<std::size_t>();
    const std::size_t n = shape_size(shape);
    if (offset + n > flat.size()) {
      throw StructuralError("snapshot group '" + g.at("name").get<std::string>() + "' runs past the data");
    }
    out.add(g.at("name").get<std::string>(),
            Tensor(shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                              flat.begin() + static_cast<std::ptrdiff_t>(offset + n))));
  }
  return out;
}

}  // namespace normlab::tf
