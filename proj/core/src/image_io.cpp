#include "hkd/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "hkd/persist.hpp"

namespace hkd {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& payload) {
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32_be(out, crc);
}

}  // namespace

void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int width,
               int height, int channels) {
    if (width < 1 || height < 1 || (channels != 1 && channels != 3))
        throw shape_error("write_png: need positive size and 1 or 3 channels");
    if (pixels.size() != static_cast<size_t>(width) * height * channels)
        throw shape_error("write_png: pixel buffer size does not match dimensions");

    // Raw image stream: filter byte 0 before each scanline.
    std::vector<uint8_t> raw;
    raw.reserve(pixels.size() + height);
    size_t stride = static_cast<size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels.begin() + y * stride, pixels.begin() + (y + 1) * stride);
    }
    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 9) !=
        Z_OK)
        throw io_error("write_png: zlib compression failed");
    comp.resize(comp_cap);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(width));
    put_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);                             // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);         // grayscale / truecolor
    ihdr.push_back(0);                             // compression
    ihdr.push_back(0);                             // filter
    ihdr.push_back(0);                             // no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw io_error("cannot open " + tmp + " for writing");
    size_t written = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (written != out.size()) {
        std::remove(tmp.c_str());
        throw io_error("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw io_error("cannot rename " + tmp + " to " + path);
    }
}

uint8_t value_to_byte(float x) {
    float v = (x + 1.0f) * 0.5f;
    v = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(v * 255.0f));
}

static void image_dims(const Tensor& image, int& C, int& H, int& W, size_t& offset) {
    const Shape& s = image.shape();
    offset = 0;
    if (s.size() == 4) {
        if (s[0] != 1) throw shape_error("save_image_png: batch dimension must be 1");
        C = s[1];
        H = s[2];
        W = s[3];
    } else if (s.size() == 3) {
        C = s[0];
        H = s[1];
        W = s[2];
    } else {
        throw shape_error("save_image_png: expected [C,H,W] or [1,C,H,W], got " +
                          shape_str(s));
    }
    if (C != 1 && C != 3) throw shape_error("save_image_png: C must be 1 or 3");
}

static void planes_to_interleaved(const float* src, int C, int H, int W,
                                  std::vector<uint8_t>& dst, int dst_w, int x0, int y0) {
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                dst[((static_cast<size_t>(y0) + y) * dst_w + x0 + x) * C + c] =
                    value_to_byte(src[(static_cast<size_t>(c) * H + y) * W + x]);
}

void save_image_png(const std::string& path, const Tensor& image) {
    int C, H, W;
    size_t offset;
    image_dims(image, C, H, W, offset);
    std::vector<uint8_t> px(static_cast<size_t>(W) * H * C);
    planes_to_interleaved(image.data(), C, H, W, px, W, 0, 0);
    write_png(path, px, W, H, C);
}

void save_contact_sheet(const std::string& path, const Tensor& batch, int cols) {
    const Shape& s = batch.shape();
    if (s.size() != 4) throw shape_error("save_contact_sheet: expected [N,C,H,W]");
    int N = s[0], C = s[1], H = s[2], W = s[3];
    if (C != 1 && C != 3) throw shape_error("save_contact_sheet: C must be 1 or 3");
    if (cols < 1) cols = static_cast<int>(std::ceil(std::sqrt(double(N))));
    int rows = (N + cols - 1) / cols;
    int sheet_w = cols * W + (cols - 1);
    int sheet_h = rows * H + (rows - 1);
    std::vector<uint8_t> px(static_cast<size_t>(sheet_w) * sheet_h * C, 128);
    int64_t per = static_cast<int64_t>(C) * H * W;
    for (int n = 0; n < N; ++n) {
        int r = n / cols, c = n % cols;
        planes_to_interleaved(batch.data() + n * per, C, H, W, px, sheet_w, c * (W + 1),
                              r * (H + 1));
    }
    write_png(path, px, sheet_w, sheet_h, C);
}

}  // namespace hkd
