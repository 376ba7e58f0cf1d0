#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mdpet/tensor.hpp"

namespace mdpet::nn {

/// Ordered, uniquely named float32 tensors of one network: trainable
/// parameters and BatchNorm running statistics alike. Names carry a group
/// prefix (`enc.`, `dec.`, `cls.`).
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor<float> tensor;
  };

  /// Throws ValidationError on a duplicate name.
  void add(std::string name, Tensor<float> tensor);

  const Tensor<float>* find(std::string_view name) const;
  Tensor<float>* find(std::string_view name);
  const Tensor<float>& at(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Entries whose name starts with prefix, in order.
  ModelParams with_prefix(std::string_view prefix) const;

  /// Total element count.
  std::size_t element_count() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<Entry> entries_;
};

/// Writes `<stem>.f32` (concatenated little-endian float32 tensors) and
/// `<stem>.json` (index of name, shape, byte offset in manifest order).
void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem);

ModelParams load_checkpoint(const std::filesystem::path& stem);

/// `<stem>.json` for a stem, or the path itself when it already names the index.
std::filesystem::path checkpoint_index_path(const std::filesystem::path& stem);

}  // namespace mdpet::nn
