// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <promptevo/image.hpp>

#include <doctest.h>

using namespace promptevo;

namespace
{

Image gradient(int w, int h)
{
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
            auto* p = img.pixel(x, y);
            p[0] = static_cast<std::uint8_t>(x * 7);
            p[1] = static_cast<std::uint8_t>(y * 13);
            p[2] = static_cast<std::uint8_t>((x + y) * 3);
        }
    return img;
}

} // namespace

TEST_CASE("png encode/decode is lossless")
{
    const auto img = gradient(17, 9);
    const auto bytes = encode_png(img);
    CHECK(bytes.size() > 8);
    CHECK(decode_png(bytes) == img);
}

TEST_CASE("corrupt png is an error, not a crash")
{
    auto bytes = encode_png(gradient(4, 4));
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_png(bytes), InputError);
    CHECK_THROWS_AS(decode_png({1, 2, 3}), InputError);
}

TEST_CASE("image files and the store")
{
    testsupport::TempDir dir;
    const auto img = gradient(6, 5);
    write_png_file(img, dir / "a.png");
    CHECK(read_image_file(dir / "a.png") == img);
    testsupport::spit(dir / "bad.png", "not an image");
    CHECK_THROWS_AS(read_image_file(dir / "bad.png"), InputError);

    ImageStore store;
    const auto h1 = store.load(dir / "a.png");
    const auto h2 = store.load(dir / "." / "a.png");
    CHECK(h1 == h2);
    CHECK(store.size() == 1);
    CHECK(*store.get(h1) == img);
    CHECK(store.content_hash(h1) == img.content_hash());
    const auto h3 = store.put(gradient(2, 2));
    CHECK(h3 != h1);
    CHECK_THROWS_AS(static_cast<void>(store.get(ImageHandle {999})), InputError);
}

TEST_CASE("content hash depends on dimensions and pixels")
{
    Image a(2, 3, 0);
    Image b(3, 2, 0);
    CHECK(a.content_hash() != b.content_hash());
    Image c(2, 3, 0);
    CHECK(a.content_hash() == c.content_hash());
    c.pixel(1, 1)[2] = 1;
    CHECK(a.content_hash() != c.content_hash());
}
