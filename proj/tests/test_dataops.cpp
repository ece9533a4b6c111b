#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "birdrone/birdrone.hpp"
#include "catch_amalgamated.hpp"

using namespace brd;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(static_cast<bool>(is));
    return std::string(std::istreambuf_iterator<char>(is), {});
}

SceneSpec quick_spec() {
    SceneSpec spec;
    spec.image_size = 96;
    spec.max_objects = 3;
    spec.scale_max = 48.0;
    return spec;
}

bool same_pixels(const Tensor<float>& a, const Tensor<float>& b) {
    if (!(a.shape() == b.shape())) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("same seed regenerates the dataset bit for bit") {
    const SceneSpec spec = quick_spec();
    auto a = generate_dataset<float>(spec, 6, 42);
    auto b = generate_dataset<float>(spec, 6, 42);
    REQUIRE(a.size() == 6);
    for (int k = 0; k < 6; ++k) {
        REQUIRE(a[k].id == b[k].id);
        REQUIRE(same_pixels(a[k].image, b[k].image));
        REQUIRE(a[k].labels.size() == b[k].labels.size());
        for (std::size_t i = 0; i < a[k].labels.size(); ++i) {
            REQUIRE(a[k].labels[i].cx == b[k].labels[i].cx);
            REQUIRE(a[k].labels[i].w == b[k].labels[i].w);
            REQUIRE(a[k].labels[i].class_id == b[k].labels[i].class_id);
        }
    }
    auto c = generate_dataset<float>(spec, 1, 43);
    REQUIRE_FALSE(same_pixels(a[0].image, c[0].image));
}

TEST_CASE("thread count does not change what gets generated") {
    const SceneSpec spec = quick_spec();
    auto one = generate_dataset<float>(spec, 8, 7, 1);
    auto four = generate_dataset<float>(spec, 8, 7, 4);
    REQUIRE(one.size() == four.size());
    for (std::size_t k = 0; k < one.size(); ++k) {
        REQUIRE(one[k].id == four[k].id);
        REQUIRE(same_pixels(one[k].image, four[k].image));
        REQUIRE(one[k].labels.size() == four[k].labels.size());
    }
}

TEST_CASE("samples carry zero-padded sequential ids") {
    auto ds = generate_dataset<float>(quick_spec(), 3, 1);
    REQUIRE(ds[0].id == "000000");
    REQUIRE(ds[1].id == "000001");
    REQUIRE(ds[2].id == "000002");
}

TEST_CASE("generated labels are valid normalized boxes") {
    SceneSpec spec = quick_spec();
    spec.boundary_prob = 0.5;  // stress the edge-clipping path
    auto ds = generate_dataset<float>(spec, 16, 5);
    std::size_t total = 0;
    for (const auto& s : ds) {
        REQUIRE(s.image.shape() == Shape{1, 1, 96, 96});
        REQUIRE(s.labels.size() >= 1);
        REQUIRE(s.labels.size() <= 3);
        for (const auto& b : s.labels) {
            b.validate(2);
            REQUIRE(b.x1() >= -1e-9);
            REQUIRE(b.y1() >= -1e-9);
            REQUIRE(b.x2() <= 1.0 + 1e-9);
            REQUIRE(b.y2() <= 1.0 + 1e-9);
            ++total;
        }
        for (std::size_t i = 0; i < s.image.numel(); ++i) {
            REQUIRE(s.image.data()[i] >= 0.0f);
            REQUIRE(s.image.data()[i] <= 1.0f);
        }
    }
    REQUIRE(total >= 16);
}

TEST_CASE("a tiny scale window yields only extremely small objects") {
    SceneSpec spec;
    spec.image_size = 96;
    spec.scale_min = 6.0;
    spec.scale_max = 7.0;
    spec.blur_prob = 0.0;
    spec.occlusion_prob = 0.0;
    spec.boundary_prob = 0.0;
    spec.max_objects = 2;
    auto ds = generate_dataset<float>(spec, 12, 9);
    for (const auto& s : ds)
        for (const auto& b : s.labels) {
            REQUIRE(size_bin(b, spec.image_size) == SizeBin::extremely_small);
            REQUIRE(std::max(b.w, b.h) * spec.image_size < 10.0);
        }
}

TEST_CASE("small_bias forces every object under 32 px") {
    SceneSpec spec;
    spec.image_size = 160;
    spec.small_bias = 1.0;
    spec.blur_prob = 0.0;
    spec.boundary_prob = 0.0;
    spec.max_objects = 3;
    auto ds = generate_dataset<float>(spec, 20, 11);
    std::size_t boxes = 0;
    for (const auto& s : ds)
        for (const auto& b : s.labels) {
            REQUIRE(std::max(b.w, b.h) * spec.image_size < 32.0);
            ++boxes;
        }
    REQUIRE(boxes >= 20);
}

TEST_CASE("scene spec validation rejects bad settings") {
    SceneSpec spec;
    spec.image_size = 16;
    REQUIRE_THROWS(spec.validate());
    spec = SceneSpec{};
    spec.channels = 2;
    REQUIRE_THROWS(spec.validate());
    spec = SceneSpec{};
    spec.scale_max = 4.0;
    REQUIRE_THROWS(spec.validate());
    spec = SceneSpec{};
    spec.scale_max = 200.0;
    REQUIRE_THROWS(spec.validate());
    spec = SceneSpec{};
    spec.drone_prob = 1.5;
    REQUIRE_THROWS(spec.validate());
    SceneSpec{}.validate();
}

TEST_CASE("split sizes floor train and val, remainder to test") {
    auto s = split_sizes(11495, {0.7, 0.2, 0.1});
    REQUIRE(s.train == 8046);
    REQUIRE(s.val == 2299);
    REQUIRE(s.test == 1150);

    s = split_sizes(100, {0.7, 0.2, 0.1});
    REQUIRE(s.train == 70);
    REQUIRE(s.val == 20);
    REQUIRE(s.test == 10);

    s = split_sizes(24, {0.7, 0.2, 0.1});
    REQUIRE(s.train == 16);
    REQUIRE(s.val == 4);
    REQUIRE(s.test == 4);

    s = split_sizes(64, {1.0, 0.0, 0.0});
    REQUIRE(s.train == 64);
    REQUIRE(s.val == 0);
    REQUIRE(s.test == 0);

    REQUIRE_THROWS(split_sizes(10, {0.5, 0.2, 0.2}));       // sums to 0.9
    REQUIRE_THROWS(split_sizes(10, {1.2, -0.1, -0.1}));     // negative
    REQUIRE_THROWS(split_sizes(5, {0.1, 0.8, 0.1}));        // train floors to zero
}

TEST_CASE("split indices partition the dataset deterministically") {
    auto a = split_indices(50, {0.7, 0.2, 0.1}, 7);
    auto b = split_indices(50, {0.7, 0.2, 0.1}, 7);
    REQUIRE(a == b);
    REQUIRE(a[0].size() == 35);
    REQUIRE(a[1].size() == 10);
    REQUIRE(a[2].size() == 5);
    std::set<int> seen;
    for (const auto& part : a)
        for (int i : part) {
            REQUIRE(i >= 0);
            REQUIRE(i < 50);
            REQUIRE(seen.insert(i).second);  // no index twice
        }
    REQUIRE(seen.size() == 50);
    auto c = split_indices(50, {0.7, 0.2, 0.1}, 8);
    REQUIRE(a[0] != c[0]);
}

TEST_CASE("labels round trip through the text format") {
    const fs::path dir = temp_dir("bdrn_test_labels");
    Rng rng(21);
    std::vector<BoundingBox> boxes;
    for (int k = 0; k < 10; ++k) {
        BoundingBox b;
        b.class_id = k % 2;
        b.w = rng.uniform(0.05, 0.5);
        b.h = rng.uniform(0.05, 0.5);
        b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
        b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
        boxes.push_back(b);
    }
    const std::string path = (dir / "b.txt").string();
    write_labels(path, boxes);
    auto back = read_labels(path);
    REQUIRE(back.size() == boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        REQUIRE(back[k].class_id == boxes[k].class_id);
        REQUIRE(back[k].cx == Approx(boxes[k].cx).margin(1e-6));
        REQUIRE(back[k].cy == Approx(boxes[k].cy).margin(1e-6));
        REQUIRE(back[k].w == Approx(boxes[k].w).margin(1e-6));
        REQUIRE(back[k].h == Approx(boxes[k].h).margin(1e-6));
    }
    fs::remove_all(dir);
}

TEST_CASE("malformed label files fail with file and line") {
    const fs::path dir = temp_dir("bdrn_test_badlabels");
    auto write = [&](const std::string& text) {
        std::ofstream((dir / "l.txt")) << text;
        return (dir / "l.txt").string();
    };
    using Catch::Matchers::ContainsSubstring;
    REQUIRE_THROWS_WITH(read_labels(write("0 0.5 0.5 0.2\n")),
                        ContainsSubstring(":1: expected 5 numeric fields"));
    REQUIRE_THROWS_WITH(read_labels(write("0 0.5 0.5 0.2 0.2 9\n")),
                        ContainsSubstring("trailing tokens"));
    REQUIRE_THROWS_WITH(read_labels(write("7 0.5 0.5 0.2 0.2\n")),
                        ContainsSubstring("class id 7"));
    REQUIRE_THROWS_WITH(read_labels(write("0 1.5 0.5 0.2 0.2\n")),
                        ContainsSubstring("center outside"));
    REQUIRE_THROWS_WITH(read_labels(write("0 0.5 0.5 0.0 0.2\n")),
                        ContainsSubstring("size outside"));
    REQUIRE_THROWS_WITH(read_labels(write("0 0.5 0.5 0.2 0.2\n1 0.5 0.5 0.2\n")),
                        ContainsSubstring(":2:"));
    REQUIRE(read_labels(write("\n0 0.5 0.5 0.2 0.2\n\n")).size() == 1);  // blanks skipped
    fs::remove_all(dir);
}

TEST_CASE("ppm files round trip within quantization") {
    const fs::path dir = temp_dir("bdrn_test_ppm");
    Rng rng(22);

    for (int channels : {1, 3}) {
        auto img = tensor_uniform<float>(Shape{1, channels, 9, 13}, rng, 0, 1);
        const std::string p1 = (dir / "a.ppm").string();
        write_ppm(p1, img);
        auto back = read_ppm<float>(p1);
        REQUIRE(back.shape() == img.shape());
        for (std::size_t i = 0; i < img.numel(); ++i)
            REQUIRE(std::abs(back.data()[i] - img.data()[i]) <= 0.5f / 255.0f + 1e-6f);

        // a second pass is exact: quantized values re-encode to the same bytes
        const std::string p2 = (dir / "b.ppm").string();
        write_ppm(p2, back);
        REQUIRE(read_bytes(p1) == read_bytes(p2));
        auto again = read_ppm<float>(p2);
        for (std::size_t i = 0; i < back.numel(); ++i)
            REQUIRE(again.data()[i] == back.data()[i]);
    }

    std::ofstream(dir / "bad.ppm") << "P3\n2 2\n255\n";
    REQUIRE_THROWS(read_ppm<float>((dir / "bad.ppm").string()));
    std::ofstream(dir / "trunc.ppm", std::ios::binary) << "P5\n4 4\n255\nxy";
    REQUIRE_THROWS_WITH(read_ppm<float>((dir / "trunc.ppm").string()),
                        Catch::Matchers::ContainsSubstring("truncated"));
    fs::remove_all(dir);
}

TEST_CASE("dataset statistics add up") {
    SceneSpec spec = quick_spec();
    spec.min_objects = 0;
    auto ds = generate_dataset<float>(spec, 24, 3);
    auto st = dataset_stats(ds, 2, spec.image_size);
    REQUIRE(st.images == 24);
    std::size_t want_boxes = 0, want_empty = 0;
    for (const auto& s : ds) {
        want_boxes += s.labels.size();
        if (s.labels.empty()) ++want_empty;
    }
    REQUIRE(st.boxes == want_boxes);
    REQUIRE(st.empty_images == want_empty);
    REQUIRE(st.per_class.size() == 2);
    REQUIRE(st.per_class[0] + st.per_class[1] == st.boxes);
    REQUIRE(st.per_bin[0] + st.per_bin[1] + st.per_bin[2] + st.per_bin[3] == st.boxes);
    const std::string table = st.table();
    REQUIRE(table.find("drone") != std::string::npos);
    REQUIRE(table.find("bird") != std::string::npos);
}

TEST_CASE("a saved dataset loads back through the split lists") {
    const fs::path dir = temp_dir("bdrn_test_ds");
    const SceneSpec spec = quick_spec();
    auto ds = generate_dataset<float>(spec, 10, 13);
    save_dataset(dir.string(), ds);
    auto idx = split_indices(ds.size(), {0.6, 0.2, 0.2}, 5);
    write_split_lists(dir.string(), ds, idx);

    REQUIRE(read_split_list(dir.string(), "train").size() == 6);
    REQUIRE(read_split_list(dir.string(), "val").size() == 2);

    auto val = load_split<float>(dir.string(), "val");
    REQUIRE(val.size() == 2);
    for (std::size_t k = 0; k < val.size(); ++k) {
        const auto& orig = ds[idx[1][k]];
        REQUIRE(val[k].id == orig.id);
        REQUIRE(val[k].labels.size() == orig.labels.size());
        for (std::size_t i = 0; i < orig.labels.size(); ++i) {
            REQUIRE(val[k].labels[i].class_id == orig.labels[i].class_id);
            REQUIRE(val[k].labels[i].cx == Approx(orig.labels[i].cx).margin(1e-6));
            REQUIRE(val[k].labels[i].w == Approx(orig.labels[i].w).margin(1e-6));
        }
        REQUIRE(val[k].image.shape() == orig.image.shape());
        for (std::size_t i = 0; i < orig.image.numel(); ++i)
            REQUIRE(std::abs(val[k].image.data()[i] - orig.image.data()[i]) <=
                    0.5f / 255.0f + 1e-6f);
    }
    REQUIRE_THROWS_WITH(read_split_list(dir.string(), "nope"),
                        Catch::Matchers::ContainsSubstring("splits/"));
    fs::remove_all(dir);
}
