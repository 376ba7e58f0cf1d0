#include "mdpet/nn/checkpoint.hpp"

#include <bit>

#include <json.hpp>

#include "mdpet/io.hpp"

namespace mdpet::nn {

using json = nlohmann::ordered_json;

void ModelParams::add(std::string name, Tensor<float> tensor) {
  if (find(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor<float>* ModelParams::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

Tensor<float>* ModelParams::find(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

const Tensor<float>& ModelParams::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw ValidationError("no parameter named '" + std::string(name) + "'");
}

ModelParams ModelParams::with_prefix(std::string_view prefix) const {
  ModelParams out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) out.entries_.push_back(e);
  }
  return out;
}

std::size_t ModelParams::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].tensor == b.entries_[i].tensor)) {
      return false;
    }
  }
  return true;
}

std::filesystem::path checkpoint_index_path(const std::filesystem::path& stem) {
  if (stem.extension() == ".json") return stem;
  return std::filesystem::path(stem.string() + ".json");
}

namespace {

std::filesystem::path data_path(const std::filesystem::path& stem) {
  auto index = checkpoint_index_path(stem);
  return index.replace_extension(".f32");
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem) {
  const auto data_file = data_path(stem);
  std::string bytes;
  json index;
  index["format"] = "mdpet-checkpoint";
  index["version"] = 1;
  index["byte_order"] = "little";
  index["dtype"] = "float32";
  index["data_file"] = data_file.filename().string();
  json tensors = json::array();
  for (const auto& e : params.entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", bytes.size()}});
    io::append_f32(bytes, e.tensor.data());
  }
  index["tensors"] = std::move(tensors);
  io::write_text(data_file, bytes);
  io::write_text(checkpoint_index_path(stem), index.dump(2) + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& stem) {
  const auto index_file = checkpoint_index_path(stem);
  json index;
  try {
    index = json::parse(io::read_text(index_file));
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed checkpoint index " + index_file.string() + ": " + e.what());
  }
  if (index.value("format", "") != "mdpet-checkpoint") {
    throw ValidationError("not a checkpoint index: " + index_file.string());
  }
  const auto data_file = index_file.parent_path() / index.at("data_file").get<std::string>();
  const std::string bytes = io::read_text(data_file);

  ModelParams params;
  std::size_t expected_offset = 0;
  for (const auto& t : index.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const std::size_t count = shape_size(shape);
    if (offset != expected_offset || offset + count * 4 > bytes.size()) {
      throw ValidationError("checkpoint " + data_file.string() + ": tensor '" + name +
                            "' has an inconsistent offset");
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) {
        bits = (bits << 8) | static_cast<unsigned char>(bytes[offset + 4 * i + static_cast<std::size_t>(b)]);
      }
      values[i] = std::bit_cast<float>(bits);
    }
    params.add(name, Tensor<float>(shape, std::move(values)));
    expected_offset += count * 4;
  }
  if (expected_offset != bytes.size()) {
    throw ValidationError("checkpoint " + data_file.string() + " has trailing bytes");
  }
  return params;
}

}  // namespace mdpet::nn
