#include "mixwarp/image_io.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "mixwarp/errors.hpp"

namespace mixwarp {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Header tokenizer for PNM files: whitespace separated, '#' starts a comment.
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  long next_int(const std::string& what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError("corrupt PGM header: expected " + what);
    }
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) throw FormatError("corrupt PGM header: " + what + " too large");
      ++pos_;
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 2;
};

Image make_image(long rows, long cols, const std::filesystem::path& path) {
  if (rows <= 0 || cols <= 0) throw FormatError("zero image dimensions in " + path.string());
  try {
    return Image(Lattice(static_cast<int>(rows), static_cast<int>(cols)));
  } catch (const InvalidDimension& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Image read_pgm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  const bool ascii = bytes[1] == '2';
  PnmHeader header(bytes);
  const long cols = header.next_int("width");
  const long rows = header.next_int("height");
  const long maxval = header.next_int("maxval");
  if (maxval <= 0 || maxval > 65535) throw FormatError("corrupt PGM header: bad maxval");
  Image img = make_image(rows, cols, path);
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if (ascii) {
    for (std::size_t i = 0; i < count; ++i) {
      const long v = header.next_int("pixel value");
      if (v > maxval) throw FormatError("PGM pixel exceeds maxval in " + path.string());
      img.values()[static_cast<Eigen::Index>(i)] = v * scale;
    }
    return img;
  }
  // Exactly one whitespace byte separates the header from the raster.
  header.skip(1);
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  if (bytes.size() < header.pos() + count * bytes_per_sample) {
    throw FormatError("truncated PGM raster in " + path.string());
  }
  const unsigned char* raster = bytes.data() + header.pos();
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = bytes_per_sample == 2 ? (raster[2 * i] << 8) | raster[2 * i + 1] : raster[i];
    if (v > static_cast<unsigned>(maxval)) throw FormatError("PGM pixel exceeds maxval in " + path.string());
    img.values()[static_cast<Eigen::Index>(i)] = v * scale;
  }
  return img;
}

struct MemoryReader {
  const std::vector<unsigned char>* bytes;
  std::size_t pos;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->pos + length > reader->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, reader->bytes->data() + reader->pos, length);
  reader->pos += length;
}

void png_ignore_warning(png_structp, png_const_charp) {}

struct PngDecoded {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int bit_depth = 0;
  bool grayscale = false;
  std::vector<unsigned char> pixels;  // rows of native-endian samples
};

// libpng reports errors through longjmp, so this routine keeps every object
// with a destructor outside its own frame.
bool decode_png(MemoryReader& reader, PngDecoded& out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_ignore_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &reader, png_read_from_memory);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.grayscale = png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY;
  out.bit_depth = png_get_bit_depth(png, info);
  if (!out.grayscale) {
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
  }
  if (out.bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    out.bit_depth = 8;
  }
  if (out.bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.pixels.resize(row_bytes * out.height);
  for (png_uint_32 j = 0; j < out.height; ++j) png_read_row(png, out.pixels.data() + j * row_bytes, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

Image read_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  MemoryReader reader{&bytes, 0};
  PngDecoded decoded;
  if (!decode_png(reader, decoded)) throw FormatError("corrupt PNG file: " + path.string());
  if (!decoded.grayscale) {
    throw FormatError("unsupported PNG color type in " + path.string() + " (grayscale required)");
  }
  Image img = make_image(decoded.height, decoded.width, path);
  const bool wide = decoded.bit_depth == 16;
  const double scale = wide ? 1.0 / 65535.0 : 1.0 / 255.0;
  const std::size_t count = static_cast<std::size_t>(decoded.width) * decoded.height;
  for (std::size_t i = 0; i < count; ++i) {
    double v;
    if (wide) {
      std::uint16_t sample;
      std::memcpy(&sample, decoded.pixels.data() + 2 * i, 2);
      v = sample;
    } else {
      v = decoded.pixels[i];
    }
    img.values()[static_cast<Eigen::Index>(i)] = v * scale;
  }
  return img;
}

constexpr std::array<unsigned char, 8> kPngSignature{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
constexpr char kRawMagic[4] = {'W', 'F', 'R', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5')) {
    return read_pgm(bytes, path);
  }
  if (bytes.size() >= kPngSignature.size() &&
      std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return read_png(bytes, path);
  }
  throw FormatError("unsupported image format: " + path.string());
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const Lattice& lat = img.lattice();
  out << "P5\n" << lat.cols() << ' ' << lat.rows() << "\n255\n";
  std::vector<unsigned char> raster(static_cast<std::size_t>(lat.size()));
  for (int i = 0; i < lat.size(); ++i) {
    const double v = std::isfinite(img.values()[i]) ? std::clamp(img.values()[i], 0.0, 1.0) : 0.0;
    raster[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

void write_raw_float(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kRawMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(img.lattice().rows()));
  put_u32(out, static_cast<std::uint32_t>(img.lattice().cols()));
  put_u32(out, 0);
  for (int i = 0; i < img.lattice().size(); ++i) {
    const float f = static_cast<float>(img.values()[i]);
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

Image read_raw_float(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
    throw FormatError("not a raw float field: " + path.string());
  }
  const std::uint32_t rows = get_u32(bytes.data() + 4);
  const std::uint32_t cols = get_u32(bytes.data() + 8);
  if (rows == 0 || cols == 0) throw FormatError("zero dimensions in " + path.string());
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != 16 + 4 * count) throw FormatError("raw float payload size mismatch in " + path.string());
  Image img = make_image(rows, cols, path);
  for (std::size_t i = 0; i < count; ++i) {
    img.values()[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
  }
  return img;
}

}  // namespace mixwarp
