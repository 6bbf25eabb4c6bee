#include "profile.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "binary_io.hpp"
#include "errors.hpp"

namespace uniprofile {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'U', 'E', 'M', 'B'};
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::kNone: return "none";
    case Normalization::kUnitLength: return "unit_length";
    case Normalization::kQuantile: return "quantile";
  }
  return "none";
}

Normalization normalization_from_string(const std::string& s) {
  if (s == "none") return Normalization::kNone;
  if (s == "unit_length") return Normalization::kUnitLength;
  if (s == "quantile") return Normalization::kQuantile;
  throw ConfigError("unknown normalization '" + s + "'");
}

ProfileMatrix::ProfileMatrix(std::vector<std::uint64_t> client_ids, std::uint32_t dim,
                             std::vector<float> values)
    : client_ids_(std::move(client_ids)), dim_(dim), values_(std::move(values)) {
  if (values_.size() != client_ids_.size() * static_cast<std::size_t>(dim_))
    throw ShapeError("profile values do not match n_clients x dim");
  index_.reserve(client_ids_.size());
  for (std::size_t i = 0; i < client_ids_.size(); ++i)
    if (!index_.emplace(client_ids_[i], i).second)
      throw ValidationError("duplicate client id " + std::to_string(client_ids_[i]) +
                            " in profile matrix");
}

std::optional<std::size_t> ProfileMatrix::find(std::uint64_t client_id) const {
  auto it = index_.find(client_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

json ProfileMatrix::metadata() const {
  json blocks_j = json::array();
  for (const auto& b : blocks)
    blocks_j.push_back({{"source", b.source},
                        {"offset", b.offset},
                        {"width", b.width},
                        {"normalization", to_string(b.normalization)}});
  return {{"source", source},
          {"feature_names", feature_names},
          {"normalization", to_string(normalization)},
          {"blocks", blocks_j}};
}

void ProfileMatrix::set_metadata(const json& j) {
  source = j.value("source", std::string{});
  feature_names = j.value("feature_names", std::vector<std::string>{});
  normalization = normalization_from_string(j.value("normalization", std::string("none")));
  blocks.clear();
  if (auto it = j.find("blocks"); it != j.end())
    for (const auto& b : *it)
      blocks.push_back({b.at("source").get<std::string>(), b.at("offset").get<std::uint32_t>(),
                        b.at("width").get<std::uint32_t>(),
                        normalization_from_string(b.at("normalization").get<std::string>())});
  if (!feature_names.empty() && feature_names.size() != dim_)
    throw ValidationError("feature_names length does not match dim");
}

bool ProfileMatrix::operator==(const ProfileMatrix& o) const {
  // Bitwise payload comparison: NaN patterns and signed zeros count.
  return client_ids_ == o.client_ids_ && dim_ == o.dim_ &&
         values_.size() == o.values_.size() &&
         std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(float)) == 0 &&
         metadata() == o.metadata();
}

void write_uemb(const ProfileMatrix& m, std::ostream& out) {
  io::LeWriter w(out);
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kUembVersion);
  w.put<std::uint64_t>(m.rows());
  w.put<std::uint32_t>(m.dim());
  w.put_string(m.metadata().dump());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    w.put<std::uint64_t>(m.client_ids()[i]);
    w.put_floats(m.row(i).data(), m.dim());
  }
  if (!w.ok()) throw IoError("failed writing embedding stream");
}

void write_uemb_file(const ProfileMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file '" + path + "'");
  write_uemb(m, out);
  out.close();
  if (!out) throw IoError("failed writing embedding file '" + path + "'");
}

ProfileMatrix read_uemb(std::istream& in) {
  io::LeReader r(in, "embedding file");
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("embedding file: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kUembVersion)
    throw ParseError("embedding file: unsupported version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint32_t>();
  json meta;
  try {
    meta = json::parse(r.get_string(1u << 26));
  } catch (const json::exception& ex) {
    throw ParseError(std::string("embedding file: bad metadata: ") + ex.what());
  }
  if (dim > (1u << 24) || n > (std::numeric_limits<std::uint64_t>::max() / 8) / (dim + 2u))
    throw ParseError("embedding file: implausible size");
  // grown row by row so a corrupt header cannot force a huge allocation
  std::vector<std::uint64_t> ids;
  std::vector<float> values;
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    ids.push_back(r.get<std::uint64_t>());
    r.get_floats(row.data(), dim);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (!r.at_eof()) throw ParseError("embedding file: trailing bytes");
  ProfileMatrix m;
  try {
    m = ProfileMatrix(std::move(ids), dim, std::move(values));
    m.set_metadata(meta);
  } catch (const json::exception& ex) {
    throw ParseError(std::string("embedding file: bad metadata: ") + ex.what());
  } catch (const ValidationError& ex) {
    throw ParseError(std::string("embedding file: ") + ex.what());
  }
  return m;
}

ProfileMatrix read_uemb_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file '" + path + "'");
  return read_uemb(in);
}

void write_tsv(const ProfileMatrix& m, std::ostream& out) {
  out << "client_id";
  for (std::uint32_t j = 0; j < m.dim(); ++j) {
    out << '\t';
    if (!m.feature_names.empty())
      out << m.feature_names[j];
    else
      out << (m.source.empty() ? std::string("dim") : m.source) << '_' << j;
  }
  out << '\n';
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << m.client_ids()[i];
    for (float v : m.row(i)) out << '\t' << v;
    out << '\n';
  }
}

}  // namespace uniprofile
