#ifndef SMS_PNG_HPP
#define SMS_PNG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <zlib.h>

#include "sms/io.hpp"
#include "sms/tensor.hpp"

namespace sms {

namespace detail {

inline void png_chunk(std::string& out, const char type[4],
                      const std::string& data) {
  const std::uint32_t len = static_cast<std::uint32_t>(data.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  std::string body(type, 4);
  body += data;
  out += body;
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()),
            static_cast<uInt>(body.size())));
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
}

}  // namespace detail

/// 8-bit grayscale PNG; deterministic for identical input.
inline std::string encode_gray_png(const std::vector<std::uint8_t>& pixels,
                                   std::int64_t width, std::int64_t height) {
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  auto be32 = [&](std::string& s, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  be32(ihdr, static_cast<std::uint32_t>(width));
  be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit gray
  detail::png_chunk(out, "IHDR", ihdr);

  std::string raw;
  raw.reserve(static_cast<std::size_t>(height * (width + 1)));
  for (std::int64_t y = 0; y < height; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data() + y * width),
               static_cast<std::size_t>(width));
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::string comp(comp_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(comp.data()), &comp_len,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failed");
  comp.resize(comp_len);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", "");
  return out;
}

/// One grayscale PNG per slice: magnitude, normalized by the per-slice
/// maximum (all-zero slices render black); coil axis is combined
/// root-sum-of-squares.
inline void write_magnitude_pngs(const Tensor4& t, const std::string& out_base) {
  if (t.domain() != Domain::image)
    throw std::invalid_argument(
        "plot: expects an image-domain tensor (apply ifft2c first)");
  const auto& d = t.dims();
  for (std::int64_t s = 0; s < d.n_slice; ++s) {
    std::vector<double> mag(static_cast<std::size_t>(d.n_ky * d.n_kx), 0.0);
    double peak = 0;
    for (std::int64_t y = 0; y < d.n_ky; ++y)
      for (std::int64_t x = 0; x < d.n_kx; ++x) {
        double sos = 0;
        for (std::int64_t c = 0; c < d.n_coil; ++c)
          sos += std::norm(t.at(s, c, y, x));
        const double v = std::sqrt(sos);
        mag[static_cast<std::size_t>(y * d.n_kx + x)] = v;
        peak = std::max(peak, v);
      }
    std::vector<std::uint8_t> px(mag.size());
    for (std::size_t i = 0; i < mag.size(); ++i)
      px[i] = peak > 0 ? static_cast<std::uint8_t>(
                             std::lround(255.0 * mag[i] / peak))
                       : 0;
    write_file_bytes(out_base + "_slice" + std::to_string(s) + ".png",
                     encode_gray_png(px, d.n_kx, d.n_ky));
  }
}

}  // namespace sms

#endif  // SMS_PNG_HPP
