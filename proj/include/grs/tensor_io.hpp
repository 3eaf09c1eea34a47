#pragma once

// Named-tensor snapshot files:
//
//   u64 little-endian  header byte length
//   header             JSON {"format":"grs-tensors","version":1,
//                            "tensors":[{"name":..., "shape":[rows, cols]}, ...]}
//   payload            float64 little-endian, row-major, tensors in header order

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "grs/errors.hpp"

namespace grs {

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

using TensorList = std::vector<NamedTensor>;

namespace detail {
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline std::string encode_tensors(const TensorList& tensors) {
  nlohmann::json header;
  header["format"] = "grs-tensors";
  header["version"] = 1;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
  }
  const std::string text = header.dump();
  std::string out;
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& t : tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        detail::put_u64(out, std::bit_cast<std::uint64_t>(t.value(r, c)));
      }
    }
  }
  return out;
}

inline TensorList decode_tensors(const std::string& bytes) {
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw InputError("tensor snapshot: truncated header length");
  const std::uint64_t header_len = detail::get_u64(data);
  if (header_len > bytes.size() - 8) throw InputError("tensor snapshot: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("tensor snapshot: bad header: ") + e.what());
  }
  if (header.value("format", "") != "grs-tensors") throw InputError("tensor snapshot: wrong format tag");
  TensorList out;
  std::size_t offset = 8 + header_len;
  for (const auto& entry : header.at("tensors")) {
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    NamedTensor t{entry.at("name").get<std::string>(), Eigen::MatrixXd(rows, cols)};
    const std::size_t need = static_cast<std::size_t>(rows * cols) * 8;
    if (offset + need > bytes.size()) throw InputError("tensor snapshot: truncated payload");
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        t.value(r, c) = std::bit_cast<double>(detail::get_u64(data + offset));
        offset += 8;
      }
    }
    out.push_back(std::move(t));
  }
  if (offset != bytes.size()) throw InputError("tensor snapshot: trailing bytes");
  return out;
}

inline void save_tensors(const std::string& path, const TensorList& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  const std::string bytes = encode_tensors(tensors);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline TensorList load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

}  // namespace grs
