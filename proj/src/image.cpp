// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>
#include <promptevo/image.hpp>

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace promptevo
{

Image::Image(int w, int h, std::uint8_t fill):
    width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill)
{
    if (w < 0 || h < 0)
        throw InputError("image dimensions must be non-negative");
}

std::string Image::content_hash() const
{
    ContentHasher hasher;
    hasher.field(static_cast<std::uint64_t>(width)).field(static_cast<std::uint64_t>(height));
    hasher.field(std::string_view(reinterpret_cast<const char*>(rgb.data()), rgb.size()));
    return hasher.hex_digest();
}

namespace
{

void png_error_fn(png_structp, png_const_charp message)
{
    throw InputError(std::string("png: ") + message);
}

void png_warning_fn(png_structp, png_const_charp)
{
}

struct PngReadSource
{
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void png_read_fn(png_structp png, png_bytep out, png_size_t length)
{
    auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
    if (src->offset + length > src->bytes->size())
        png_error(png, "truncated data");
    std::memcpy(out, src->bytes->data() + src->offset, length);
    src->offset += length;
}

void png_write_fn(png_structp png, png_bytep data, png_size_t length)
{
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void png_flush_fn(png_structp)
{
}

} // namespace

std::vector<std::uint8_t> encode_png(const Image& image)
{
    if (image.empty())
        throw InputError("cannot encode an empty image");
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    try
    {
        png_set_write_fn(png, &out, png_write_fn, png_flush_fn);
        png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y)
            png_write_row(png, const_cast<png_bytep>(image.pixel(0, y)));
        png_write_end(png, nullptr);
    }
    catch (...)
    {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
        throw InputError("not a PNG image");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    Image image;
    try
    {
        PngReadSource src {&bytes, 0};
        png_set_read_fn(png, &src, png_read_fn);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16)
            png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA)
            png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
        png_read_update_info(png, info);
        image = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
        if (png_get_rowbytes(png, info) != static_cast<std::size_t>(image.width) * 3)
            throw InputError("png: unsupported pixel layout");
        std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
        for (int y = 0; y < image.height; ++y)
            rows[static_cast<std::size_t>(y)] = image.pixel(0, y);
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    catch (...)
    {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

namespace
{

struct JpegErrorManager
{
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

} // namespace

Image decode_jpeg(const std::vector<std::uint8_t>& bytes)
{
    jpeg_decompress_struct cinfo {};
    JpegErrorManager err {};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    // No C++ objects with destructors are live between setjmp and the decode calls.
    Image* image = new Image();
    if (setjmp(err.jump))
    {
        jpeg_destroy_decompress(&cinfo);
        delete image;
        throw InputError("jpeg: decode failed");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    image->width = static_cast<int>(cinfo.output_width);
    image->height = static_cast<int>(cinfo.output_height);
    image->rgb.resize(static_cast<std::size_t>(image->width) * image->height * 3);
    while (cinfo.output_scanline < cinfo.output_height)
    {
        JSAMPROW row = image->pixel(0, static_cast<int>(cinfo.output_scanline));
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    Image result = std::move(*image);
    delete image;
    return result;
}

Image read_image_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0)
        return decode_png(bytes);
    if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff)
        return decode_jpeg(bytes);
    throw InputError("unsupported image format: " + path.string());
}

void write_png_file(const Image& image, const std::filesystem::path& path)
{
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw InputError("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageHandle ImageStore::put(Image image)
{
    auto hash = image.content_hash();
    auto ptr = std::make_shared<const Image>(std::move(image));
    std::lock_guard lock(_mutex);
    const ImageHandle handle {_next++};
    _images.emplace(handle.value, Entry {std::move(ptr), std::move(hash)});
    return handle;
}

ImageHandle ImageStore::load(const std::filesystem::path& path)
{
    const auto key = std::filesystem::weakly_canonical(path).string();
    {
        std::lock_guard lock(_mutex);
        if (auto it = _by_path.find(key); it != _by_path.end())
            return it->second;
    }
    auto handle = put(read_image_file(path));
    std::lock_guard lock(_mutex);
    auto [it, inserted] = _by_path.emplace(key, handle);
    return it->second;
}

std::shared_ptr<const Image> ImageStore::get(ImageHandle handle) const
{
    std::lock_guard lock(_mutex);
    auto it = _images.find(handle.value);
    if (it == _images.end())
        throw InputError("unresolvable image handle " + std::to_string(handle.value));
    return it->second.image;
}

std::string ImageStore::content_hash(ImageHandle handle) const
{
    std::lock_guard lock(_mutex);
    auto it = _images.find(handle.value);
    if (it == _images.end())
        throw InputError("unresolvable image handle " + std::to_string(handle.value));
    return it->second.hash;
}

std::size_t ImageStore::size() const
{
    std::lock_guard lock(_mutex);
    return _images.size();
}

} // namespace promptevo
