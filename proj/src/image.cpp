#include "lesionnet/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <array>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "lesionnet/error.hpp"

namespace lesionnet {
namespace {

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& what) {
  fail(ErrorKind::kIo, path.string() + ": " + what);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string token;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) io_fail(path, "cannot open");
  return f;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) {
    fail(ErrorKind::kInvalidArgument, "image: invalid dimensions " + std::to_string(w) +
                                          "x" + std::to_string(h) + "x" +
                                          std::to_string(c));
  }
  pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open");
  const std::string magic = pnm_token(in);
  int channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    io_fail(path, "not a binary PPM/PGM (magic '" + magic + "')");
  }
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(pnm_token(in));
    height = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    io_fail(path, "malformed header");
  }
  if (maxval != 255) io_fail(path, "only maxval 255 is supported");
  if (width < 1 || height < 1) io_fail(path, "invalid dimensions");
  Image image(width, height, channels);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    io_fail(path, "truncated pixel data");
  }
  return image;
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open for writing");
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) io_fail(path, "write failed");
}

Image decode_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    io_fail(path, std::string("png decode failed: ") + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.width), static_cast<int>(png.height), gray ? 1 : 3);
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    io_fail(path, "png decode failed: " + msg);
  }
  return image;
}

Image decode_jpeg(const std::filesystem::path& path) {
  // Everything with a destructor lives above setjmp so the error longjmp
  // never skips one.
  FilePtr file = open_file(path);
  Image image;
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    io_fail(path, std::string("jpeg decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  image.width = static_cast<int>(cinfo.output_width);
  image.height = static_cast<int>(cinfo.output_height);
  image.channels = cinfo.output_components;
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  image.pixels.resize(stride * image.height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = image.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return image;
}

Image read_image(const std::filesystem::path& path) {
  std::array<unsigned char, 8> sig{};
  {
    FilePtr f = open_file(path);
    if (std::fread(sig.data(), 1, sig.size(), f.get()) < 2) io_fail(path, "file too short");
  }
  if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  if (sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') return decode_png(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8) return decode_jpeg(path);
  io_fail(path, "unrecognized image format");
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  Image out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = image.pixels[i];
  }
  return out;
}

}  // namespace lesionnet
