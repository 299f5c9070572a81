// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reader and writer for the safetensors-style container:
//
//   [u64 LE header length H][H bytes of UTF-8 JSON][payload]
//
// The JSON maps tensor name -> {"dtype", "shape", "data_offsets"} with offsets
// relative to the start of the payload. An optional "__metadata__" object of
// string -> string is carried through untouched.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "loramerge/error.hpp"
#include "loramerge/half.hpp"
#include "loramerge/linalg.hpp"

namespace loramerge {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

enum class DType { F32, F16 };

constexpr std::string_view dtype_name(DType d) noexcept { return d == DType::F32 ? "F32" : "F16"; }
constexpr std::size_t dtype_size(DType d) noexcept { return d == DType::F32 ? 4 : 2; }

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;  // row-major, already widened for F16

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  bool operator==(const TensorRecord&) const = default;
};

struct TensorFile {
  std::map<std::string, TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  void add(TensorRecord record) {
    std::string key = record.name;
    if (!tensors.emplace(key, std::move(record)).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate tensor name '" + key + "'");
    }
  }

  bool operator==(const TensorFile&) const = default;
};

// ---------------------------------------------------------------------------
// Matrix <-> record conversion
// ---------------------------------------------------------------------------

inline TensorRecord matrix_record(std::string name, const Matrix& m, DType dtype = DType::F32) {
  TensorRecord r;
  r.name = std::move(name);
  r.dtype = dtype;
  r.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  r.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const auto v = static_cast<float>(m(i, j));
      r.data[k++] = dtype == DType::F16 ? half::round_trip(v) : v;
    }
  }
  return r;
}

inline TensorRecord scalar_record(std::string name, double value, DType dtype = DType::F32) {
  TensorRecord r;
  r.name = std::move(name);
  r.dtype = dtype;
  const auto v = static_cast<float>(value);
  r.data = {dtype == DType::F16 ? half::round_trip(v) : v};
  return r;
}

inline Matrix record_matrix(const TensorRecord& r) {
  if (r.shape.size() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + r.name + "' has rank " + std::to_string(r.shape.size()) +
                                              ", expected a 2-d matrix");
  }
  const auto rows = static_cast<Index>(r.shape[0]);
  const auto cols = static_cast<Index>(r.shape[1]);
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = r.data[k++];
  }
  return m;
}

inline double record_scalar(const TensorRecord& r) {
  if (r.element_count() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + r.name + "' is not a scalar");
  }
  return r.data[0];
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline std::uint64_t checked_u64(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(ErrorCode::MalformedHeader, what + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace detail

inline TensorFile parse_tensor_file(std::span<const std::uint8_t> bytes) {
  using nlohmann::json;
  if (bytes.size() < 8) throw Error(ErrorCode::MalformedHeader, "file shorter than the 8-byte length prefix");
  const std::uint64_t header_len = detail::read_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    throw Error(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) + " exceeds file size");
  }
  const std::string_view header(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
  const auto payload = bytes.subspan(8 + header_len);

  std::set<std::string> seen;
  bool duplicate = false;
  std::string duplicate_name;
  json::parser_callback_t track_keys = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key) {
      auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && !duplicate) {
        duplicate = true;
        duplicate_name = key;
      }
    }
    return true;
  };

  json header_json;
  try {
    header_json = json::parse(header.begin(), header.end(), track_keys);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header_json.is_object()) throw Error(ErrorCode::MalformedHeader, "header must be a JSON object");
  if (duplicate) throw Error(ErrorCode::MalformedHeader, "duplicate tensor name '" + duplicate_name + "'");

  TensorFile file;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;

  for (const auto& [name, entry] : header_json.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw Error(ErrorCode::MalformedHeader, "__metadata__ must be an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw Error(ErrorCode::MalformedHeader, "__metadata__ values must be strings");
        file.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' needs dtype, shape and data_offsets");
    }
    TensorRecord rec;
    rec.name = name;
    const auto& dt = entry["dtype"];
    if (dt == "F32") {
      rec.dtype = DType::F32;
    } else if (dt == "F16") {
      rec.dtype = DType::F16;
    } else {
      throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' has unsupported dtype " + dt.dump());
    }
    const auto& shape = entry["shape"];
    if (!shape.is_array()) throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' shape must be an array");
    for (const auto& d : shape) rec.shape.push_back(detail::checked_u64(d, "shape entry of '" + name + "'"));
    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2) {
      throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' data_offsets must be [begin, end]");
    }
    const auto begin = detail::checked_u64(offsets[0], "data_offsets");
    const auto end = detail::checked_u64(offsets[1], "data_offsets");
    if (begin > end || end > payload.size()) {
      throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' data_offsets out of range");
    }
    const std::uint64_t count = rec.element_count();
    if (end - begin != count * dtype_size(rec.dtype)) {
      throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' byte length does not match its shape");
    }
    ranges.emplace_back(begin, end);

    rec.data.resize(count);
    const std::uint8_t* src = payload.data() + begin;
    if (rec.dtype == DType::F32) {
      std::memcpy(rec.data.data(), src, count * 4);
    } else {
      for (std::uint64_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        rec.data[i] = half::to_float(h);
      }
    }
    for (float v : rec.data) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "tensor '" + name + "' contains NaN or Inf");
    }
    file.tensors.emplace(name, std::move(rec));
  }

  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw Error(ErrorCode::MalformedHeader, "tensor payloads overlap");
    }
  }
  return file;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Payloads are laid out in ascending name order and the header is padded
/// with spaces to an 8-byte boundary, so the output is a pure function of
/// the file contents.
inline std::vector<std::uint8_t> serialize_tensor_file(const TensorFile& file) {
  using nlohmann::json;
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, rec] : file.tensors) {
    if (name == "__metadata__") throw Error(ErrorCode::InvalidArgument, "reserved tensor name __metadata__");
    if (rec.data.size() != rec.element_count()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' element count does not match its shape");
    }
    for (float v : rec.data) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "tensor '" + name + "' contains NaN or Inf");
      if (rec.dtype == DType::F16 && !std::isfinite(half::round_trip(v))) {
        throw Error(ErrorCode::InvalidValue, "tensor '" + name + "' has values outside the F16 range");
      }
    }
    const std::uint64_t bytes = rec.element_count() * dtype_size(rec.dtype);
    header[name] = {{"dtype", dtype_name(rec.dtype)}, {"shape", rec.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;

  std::string text = header.dump();
  while ((8 + text.size()) % 8 != 0) text.push_back(' ');

  std::vector<std::uint8_t> out(8 + text.size() + offset);
  const std::uint64_t header_len = text.size();
  std::memcpy(out.data(), &header_len, 8);
  std::memcpy(out.data() + 8, text.data(), text.size());
  std::uint8_t* dst = out.data() + 8 + text.size();
  for (const auto& [name, rec] : file.tensors) {
    if (rec.dtype == DType::F32) {
      std::memcpy(dst, rec.data.data(), rec.data.size() * 4);
      dst += rec.data.size() * 4;
    } else {
      for (float v : rec.data) {
        const std::uint16_t h = half::from_float(v);
        std::memcpy(dst, &h, 2);
        dst += 2;
      }
    }
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for '" + path.string() + "'");
  return bytes;
}

/// Writes to a sibling temporary and renames, so a failed write never leaves
/// a truncated file at `path`.
inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorCode::IoError, "write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move output into place at '" + path.string() + "'");
  }
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_tensor_file(bytes);
}

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = serialize_tensor_file(file);
  write_file_bytes(path, bytes);
}

}  // namespace loramerge
