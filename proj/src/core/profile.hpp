#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace uniprofile {

enum class Normalization { kNone, kUnitLength, kQuantile };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

// Contiguous column range contributed by one source.
struct SourceBlock {
  std::string source;
  std::uint32_t offset = 0;
  std::uint32_t width = 0;
  Normalization normalization = Normalization::kNone;

  bool operator==(const SourceBlock&) const = default;
};

// Client-indexed dense matrix of user vectors (row-major, 32-bit).
class ProfileMatrix {
 public:
  ProfileMatrix() = default;
  ProfileMatrix(std::vector<std::uint64_t> client_ids, std::uint32_t dim,
                std::vector<float> values);

  std::size_t rows() const { return client_ids_.size(); }
  std::uint32_t dim() const { return dim_; }
  const std::vector<std::uint64_t>& client_ids() const { return client_ids_; }
  const std::vector<float>& values() const { return values_; }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<float> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }

  // Row index of a client; ids are unique.
  std::optional<std::size_t> find(std::uint64_t client_id) const;

  // Descriptive metadata carried through the file format.
  std::string source;
  std::vector<std::string> feature_names;  // empty or one per column
  Normalization normalization = Normalization::kNone;
  std::vector<SourceBlock> blocks;  // empty means a single block of `source`

  nlohmann::json metadata() const;
  void set_metadata(const nlohmann::json& j);

  bool operator==(const ProfileMatrix& o) const;

 private:
  std::vector<std::uint64_t> client_ids_;
  std::uint32_t dim_ = 0;
  std::vector<float> values_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

// Binary embedding file:
//   "UEMB" | u32 version=1 | u64 n_clients | u32 dim | u32 meta_len | meta JSON
//   n_clients x (u64 client_id | dim x f32), all little-endian.
inline constexpr std::uint32_t kUembVersion = 1;

void write_uemb(const ProfileMatrix& m, std::ostream& out);
void write_uemb_file(const ProfileMatrix& m, const std::string& path);
ProfileMatrix read_uemb(std::istream& in);
ProfileMatrix read_uemb_file(const std::string& path);

// Debug view: header row of column names, then one row per client.
void write_tsv(const ProfileMatrix& m, std::ostream& out);

}  // namespace uniprofile
