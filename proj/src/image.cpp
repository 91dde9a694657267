#include "flame/image.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace flame {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::FILE* f, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = std::fgetc(f)) != EOF) {
    if (ch == '#') {
      while ((ch = std::fgetc(f)) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) {
    throw std::runtime_error("ppm: unexpected end of header in " + path);
  }
  return tok;
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("ppm: cannot open " + path);

  if (next_token(f.get(), path) != "P6") {
    throw std::runtime_error("ppm: not a binary P6 file: " + path);
  }
  const int w = std::stoi(next_token(f.get(), path));
  const int h = std::stoi(next_token(f.get(), path));
  const int maxval = std::stoi(next_token(f.get(), path));
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("ppm: unsupported header in " + path);
  }

  ImageU8 img(w, h);
  if (std::fread(img.data.data(), 1, img.data.size(), f.get()) != img.data.size()) {
    throw std::runtime_error("ppm: truncated pixel data in " + path);
  }
  return img;
}

void write_ppm(const ImageU8& img, const std::string& path) {
  if (img.empty()) throw std::invalid_argument("ppm: refusing to write empty image");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("ppm: cannot write " + path);
  std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width, img.height);
  if (std::fwrite(img.data.data(), 1, img.data.size(), f.get()) != img.data.size()) {
    throw std::runtime_error("ppm: short write to " + path);
  }
}

}  // namespace flame
