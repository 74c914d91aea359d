#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "fpsr/imagedata.hpp"

namespace fpsr {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
}

FingerprintImage finish(int h, int w, double ppi, const std::vector<std::uint32_t>& raw, double maxval,
                        const fs::path& path) {
    if (h <= 0 || w <= 0) {
        throw ImageError("zero-sized image: " + path.string());
    }
    FingerprintImage img(h, w, ppi);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = std::min(1.0, raw[i] / maxval);
    }
    return img;
}

// ------------------------------------------------------------------- PGM

struct PgmReader {
    const std::string& buf;
    std::size_t pos = 0;

    void skip_space_and_comments() {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    }

    long number() {
        skip_space_and_comments();
        std::size_t start = pos;
        while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (start == pos) throw ImageError("malformed PGM header");
        return std::stol(buf.substr(start, pos - start));
    }
};

FingerprintImage read_pgm(const fs::path& path, double ppi) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '2')) {
        throw ImageError("unsupported format (not a grayscale PGM): " + path.string());
    }
    const bool binary = buf[1] == '5';
    PgmReader rd{buf, 2};
    const long w = rd.number();
    const long h = rd.number();
    const long maxval = rd.number();
    if (w <= 0 || h <= 0) throw ImageError("zero-sized image: " + path.string());
    if (maxval <= 0 || maxval > 65535) throw ImageError("unsupported PGM maxval in " + path.string());

    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    std::vector<std::uint32_t> raw(n);
    if (binary) {
        ++rd.pos;  // single whitespace after maxval
        const std::size_t bpp = maxval > 255 ? 2 : 1;
        if (buf.size() < rd.pos + n * bpp) throw ImageError("truncated PGM data: " + path.string());
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + rd.pos);
        for (std::size_t i = 0; i < n; ++i) {
            raw[i] = bpp == 2 ? (std::uint32_t(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<std::uint32_t>(rd.number());
    }
    return finish(static_cast<int>(h), static_cast<int>(w), ppi, raw, static_cast<double>(maxval), path);
}

void write_pgm(const FingerprintImage& img, const fs::path& path, int bit_depth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write image: " + path.string());
    const int maxval = bit_depth == 16 ? 65535 : 255;
    out << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
    std::string bytes;
    bytes.reserve(img.size() * (bit_depth / 8));
    for (double v : img.data) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (bit_depth == 16) bytes.push_back(static_cast<char>(q >> 8));
        bytes.push_back(static_cast<char>(q & 0xFF));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError("write failed: " + path.string());
}

// ------------------------------------------------------------------- PNG

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp; every object with a destructor is created
// before setjmp so that a jump never skips one.
FingerprintImage read_png(const fs::path& path, double ppi) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageError("cannot open image: " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ImageError("unsupported format (bad PNG signature): " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("libpng initialisation failed");
    }
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    std::string error;
    png_uint_32 w = 0, h = 0;
    int depth = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        error = "unsupported format (PNG is not single-channel grayscale): " + path.string();
    } else if (w == 0 || h == 0) {
        error = "zero-sized image: " + path.string();
    } else {
        if (depth < 8) {
            png_set_expand_gray_1_2_4_to_8(png);
        }
        png_read_update_info(png, info);
        depth = png_get_bit_depth(png, info);
        const std::size_t stride = png_get_rowbytes(png, info);
        pixels.resize(stride * h);
        rows.resize(h);
        for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + r * stride;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (!error.empty()) throw ImageError(error);

    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<std::uint32_t> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
        raw[i] = depth == 16 ? (std::uint32_t(pixels[2 * i]) << 8) | pixels[2 * i + 1] : pixels[i];
    }
    return finish(static_cast<int>(h), static_cast<int>(w), ppi, raw, depth == 16 ? 65535.0 : 255.0, path);
}

void write_png(const FingerprintImage& img, const fs::path& path, int bit_depth) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageError("cannot write image: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("libpng initialisation failed");
    }
    const int bpp = bit_depth / 8;
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<png_byte> pixels(img.size() * bpp);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * maxval));
        if (bpp == 2) {
            pixels[2 * i] = static_cast<png_byte>(q >> 8);
            pixels[2 * i + 1] = static_cast<png_byte>(q & 0xFF);
        } else {
            pixels[i] = static_cast<png_byte>(q);
        }
    }
    std::vector<png_bytep> rows(img.height);
    for (int r = 0; r < img.height; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * img.width * bpp;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

FingerprintImage load_image(const fs::path& path, double ppi) {
    if (!(ppi > 0.0)) throw std::invalid_argument("ppi must be positive");
    if (!fs::exists(path)) throw ImageError("missing file: " + path.string());
    const std::string ext = lower_ext(path);
    FingerprintImage img;
    if (ext == ".png") {
        img = read_png(path, ppi);
    } else if (ext == ".pgm" || ext == ".pnm") {
        img = read_pgm(path, ppi);
    } else {
        throw ImageError("unsupported format: " + path.string());
    }
    return img;
}

void save_image(const FingerprintImage& image, const fs::path& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
    if (image.height <= 0 || image.width <= 0) throw ImageError("zero-sized image");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const std::string ext = lower_ext(path);
    if (ext == ".png") {
        write_png(image, path, bit_depth);
    } else if (ext == ".pgm" || ext == ".pnm") {
        write_pgm(image, path, bit_depth);
    } else {
        throw ImageError("unsupported format: " + path.string());
    }
}

}  // namespace fpsr
