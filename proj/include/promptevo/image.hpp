// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace promptevo
{

/// 8-bit RGB raster, row-major, no padding.
struct Image
{
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    [[nodiscard]] std::uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
    [[nodiscard]] const std::uint8_t* pixel(int x, int y) const
    {
        return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
    }
    [[nodiscard]] bool empty() const { return width == 0 || height == 0; }
    /// SHA-256 over dimensions and pixels.
    [[nodiscard]] std::string content_hash() const;

    friend bool operator==(const Image&, const Image&) = default;
};

std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);
Image decode_jpeg(const std::vector<std::uint8_t>& bytes);
/// Decodes PNG or JPEG by signature.
Image read_image_file(const std::filesystem::path& path);
void write_png_file(const Image& image, const std::filesystem::path& path);

/// Opaque reference into an ImageStore.
struct ImageHandle
{
    std::uint64_t value = 0;

    friend auto operator<=>(const ImageHandle&, const ImageHandle&) = default;
};

/// Thread-safe registry of immutable images.
class ImageStore
{
  public:
    ImageHandle put(Image image);
    /// Loads a file once; repeated paths return the same handle.
    ImageHandle load(const std::filesystem::path& path);
    /// Throws InputError for unknown handles.
    [[nodiscard]] std::shared_ptr<const Image> get(ImageHandle handle) const;
    [[nodiscard]] std::string content_hash(ImageHandle handle) const;
    [[nodiscard]] std::size_t size() const;

  private:
    struct Entry
    {
        std::shared_ptr<const Image> image;
        std::string hash;
    };

    mutable std::mutex _mutex;
    std::map<std::uint64_t, Entry> _images;
    std::map<std::string, ImageHandle> _by_path;
    std::uint64_t _next = 1;
};

} // namespace promptevo
