#pragma once

#include "stylesplat/error.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stylesplat {

/// Row-major interleaved RGB image, H x W x 3.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T(0))
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    T& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    const T& at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(width, height);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

using ImageF = Image<float>;

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Area-weighted resample; each output pixel averages the input region it covers.
template <typename T>
Image<T> resize_area(const Image<T>& src, int width, int height) {
    Image<T> out(width, height);
    const double sx = double(src.width) / width, sy = double(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        for (int x = 0; x < width; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            double acc[3] = {0, 0, 0}, wsum = 0;
            for (int iy = static_cast<int>(y0); iy < std::min(src.height, static_cast<int>(std::ceil(y1))); ++iy) {
                const double wy = std::min(y1, iy + 1.0) - std::max(y0, double(iy));
                for (int ix = static_cast<int>(x0); ix < std::min(src.width, static_cast<int>(std::ceil(x1))); ++ix) {
                    const double w = wy * (std::min(x1, ix + 1.0) - std::max(x0, double(ix)));
                    if (w <= 0) continue;
                    for (int c = 0; c < 3; ++c) acc[c] += w * double(src.at(ix, iy, c));
                    wsum += w;
                }
            }
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<T>(acc[c] / wsum);
        }
    }
    return out;
}

namespace detail {

inline void png_write_to_vector(png_structp png, png_bytep bytes, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), bytes, bytes + len);
}
inline void png_flush_noop(png_structp) {}

struct PngReadCursor {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

inline void png_read_from_span(png_structp png, png_bytep out, png_size_t len) {
    auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cur->pos + len > cur->bytes.size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, cur->bytes.data() + cur->pos, len);
    cur->pos += len;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Encodes to an 8-bit RGB PNG. Output bytes depend only on the pixel values.
template <typename T>
std::vector<std::uint8_t> encode_png(const Image<T>& img) {
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng allocation failed");
    }
    std::vector<std::uint8_t> rows(img.pixel_count() * 3);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = to_u8(static_cast<double>(img.data[i]));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * img.width * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

/// Decodes PNG bytes (any bit depth/color type) to float RGB in [0,1].
inline ImageF decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw LoadError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng allocation failed");
    }
    detail::PngReadCursor cursor{bytes, 0};
    ImageF img;
    std::vector<std::uint8_t> rgba;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw LoadError("corrupt PNG stream");
    }
    png_set_read_fn(png, &cursor, detail::png_read_from_span);
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    rgba.resize(static_cast<std::size_t>(w) * h * 3);
    row_ptrs.resize(h);
    for (int y = 0; y < h; ++y) row_ptrs[y] = rgba.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);
    img = ImageF(w, h);
    for (std::size_t i = 0; i < rgba.size(); ++i) img.data[i] = rgba[i] / 255.0f;
    return img;
}

inline ImageF decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    detail::JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail::jpeg_error_exit;
    ImageF img;
    std::vector<std::uint8_t> row;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw LoadError(std::string("corrupt JPEG stream: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img = ImageF(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    row.resize(static_cast<std::size_t>(cinfo.output_width) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        JSAMPROW ptr = row.data();
        jpeg_read_scanlines(&cinfo, &ptr, 1);
        for (std::size_t i = 0; i < row.size(); ++i)
            img.data[static_cast<std::size_t>(y) * row.size() + i] = row[i] / 255.0f;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

/// Sniffs the format from the leading bytes (PNG or JPEG).
inline ImageF decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
    throw LoadError("unrecognised image format (expected PNG or JPEG)");
}

inline ImageF read_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    try {
        return decode_image(bytes);
    } catch (const LoadError& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

template <typename T>
void write_png(const std::filesystem::path& path, const Image<T>& img) {
    const auto bytes = encode_png(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// NumPy .npy v1.0, dtype '<f4', shape (H, W, 3).
template <typename T>
void write_npy(const std::filesystem::path& path, const Image<T>& img) {
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(img.height) +
                         ", " + std::to_string(img.width) + ", 3), }";
    const std::size_t preamble = 10;
    std::size_t total = preamble + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const auto hlen = static_cast<std::uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(hlen & 0xFF), static_cast<char>(hlen >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (T v : img.data) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                           static_cast<char>((bits >> 16) & 0xFF), static_cast<char>(bits >> 24)};
        out.write(b, 4);
    }
}

}  // namespace stylesplat
