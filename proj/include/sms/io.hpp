#ifndef SMS_IO_HPP
#define SMS_IO_HPP

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sms/tensor.hpp"

namespace sms {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct InvalidHeaderError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedFileError : FormatError {
  using FormatError::FormatError;
};

namespace detail {

constexpr std::array<unsigned char, 8> kCt4fMagic = {'C', 'T', '4', 'F',
                                                     0,   0,   0,   1};

inline void append_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

/// Serializes a tensor in the CT4F container: magic, length-prefixed JSON
/// header, interleaved (re, im) little-endian payload.
inline std::string encode_tensor(const Tensor4& t) {
  nlohmann::json header;
  header["dims"] = {t.dims().n_slice, t.dims().n_coil, t.dims().n_ky,
                    t.dims().n_kx};
  header["dtype"] = t.storage() == Precision::c64 ? "c64" : "c128";
  header["domain"] = t.domain() == Domain::image ? "image" : "kspace";
  const std::string hdr = header.dump();

  std::string out(detail::kCt4fMagic.begin(), detail::kCt4fMagic.end());
  detail::append_u32le(out, static_cast<std::uint32_t>(hdr.size()));
  out += hdr;

  const std::int64_t n = t.size();
  if (t.storage() == Precision::c64) {
    std::vector<float> buf(static_cast<std::size_t>(2 * n));
    for (std::int64_t i = 0; i < n; ++i) {
      buf[2 * i] = static_cast<float>(t[i].real());
      buf[2 * i + 1] = static_cast<float>(t[i].imag());
    }
    out.append(reinterpret_cast<const char*>(buf.data()),
               buf.size() * sizeof(float));
  } else {
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<std::size_t>(n) * sizeof(cd));
  }
  return out;
}

inline Tensor4 decode_tensor(const std::string& bytes) {
  if (bytes.size() < 12 ||
      std::memcmp(bytes.data(), detail::kCt4fMagic.data(), 8) != 0) {
    throw BadMagicError("CT4F: bad magic");
  }
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i)
    hlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i]))
            << (8 * i);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen))
    throw TruncatedFileError("CT4F: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidHeaderError(std::string("CT4F: header is not valid JSON: ") +
                             e.what());
  }
  if (!header.contains("dims") || !header.contains("dtype") ||
      !header.contains("domain") || !header["dims"].is_array() ||
      header["dims"].size() != 4) {
    throw InvalidHeaderError("CT4F: header missing dims/dtype/domain");
  }

  Dims4 dims;
  std::int64_t* d[4] = {&dims.n_slice, &dims.n_coil, &dims.n_ky, &dims.n_kx};
  std::int64_t count = 1;
  for (int i = 0; i < 4; ++i) {
    if (!header["dims"][i].is_number_integer())
      throw InvalidHeaderError("CT4F: dims must be integers");
    *d[i] = header["dims"][i].get<std::int64_t>();
    if (*d[i] <= 0) throw InvalidHeaderError("CT4F: dims must be positive");
    if (count > std::numeric_limits<std::int64_t>::max() / *d[i])
      throw InvalidHeaderError("CT4F: dims product overflows 64-bit count");
    count *= *d[i];
  }

  const std::string dtype = header["dtype"].get<std::string>();
  const std::string domain = header["domain"].get<std::string>();
  if (dtype != "c64" && dtype != "c128")
    throw InvalidHeaderError("CT4F: unknown dtype '" + dtype + "'");
  if (domain != "image" && domain != "kspace")
    throw InvalidHeaderError("CT4F: unknown domain '" + domain + "'");

  const std::size_t elem = dtype == "c64" ? 2 * sizeof(float) : 2 * sizeof(double);
  if (count > static_cast<std::int64_t>(
                  (std::numeric_limits<std::size_t>::max() - 12 - hlen) / elem))
    throw InvalidHeaderError("CT4F: payload size overflows");
  const std::size_t payload = static_cast<std::size_t>(count) * elem;
  const std::size_t have = bytes.size() - 12 - hlen;
  if (have < payload)
    throw TruncatedFileError("CT4F: payload truncated (expected " +
                             std::to_string(payload) + " bytes, have " +
                             std::to_string(have) + ")");
  if (have > payload)
    throw InvalidHeaderError("CT4F: payload larger than header declares");

  Tensor4 t(dims, domain == "image" ? Domain::image : Domain::kspace);
  const char* p = bytes.data() + 12 + hlen;
  if (dtype == "c64") {
    t.set_storage(Precision::c64);
    std::vector<float> buf(static_cast<std::size_t>(2 * count));
    std::memcpy(buf.data(), p, payload);
    for (std::int64_t i = 0; i < count; ++i)
      t[i] = cd(buf[2 * i], buf[2 * i + 1]);
  } else {
    std::memcpy(t.data(), p, payload);
  }
  return t;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

/// Atomic write: temp file in the same directory, then rename.
inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline Tensor4 read_tensor(const std::string& path) {
  return decode_tensor(read_file_bytes(path));
}

inline void write_tensor(const Tensor4& t, const std::string& path) {
  write_file_bytes(path, encode_tensor(t));
}

}  // namespace sms

#endif  // SMS_IO_HPP
