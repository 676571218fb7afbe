#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "snsteg/data.hpp"

using namespace snsteg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("snsteg_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("pgm round trip and header grammar") {
    ImageGray img(2, 2);
    img.pixels = {0, 255, 128, 7};
    CHECK(decode_pgm(encode_pgm(img)) == img);
    const fs::path dir = scratch("pgm");
    write_pgm(img, dir / "a.pgm");
    CHECK(read_pgm(dir / "a.pgm") == img);

    const std::string body("\x00\xff\x80\x07", 4);
    CHECK(decode_pgm("P5\n# made by hand\n2 # width\n2\n# maxval next\n255\n" + body) == img);
    CHECK_THROWS_AS(decode_pgm("P2\n2 2\n255\n0 255 128 7\n"), FormatError);
    CHECK_THROWS_AS(decode_pgm("P5\n2 2\n255\n" + body.substr(0, 3)), FormatError);
    CHECK_THROWS_AS(decode_pgm("P5\n2 2\n65535\n" + body + body), FormatError);
    CHECK_THROWS(read_pgm(dir / "missing.pgm"));
}

TEST_CASE("synthetic covers") {
    CHECK(synth_cover(5, 32, 5.0) == synth_cover(5, 32, 5.0));
    CHECK_FALSE(synth_cover(5, 32, 5.0) == synth_cover(6, 32, 5.0));
    double white = 0.0, smooth = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        white += lag1_autocorrelation(synth_cover(s, 64, 1.0));
        smooth += lag1_autocorrelation(synth_cover(s, 64, 5.0));
    }
    CHECK(white / 100.0 < 0.1);
    CHECK(smooth / 100.0 > 0.5);
    const auto c = synth_cover(9, 64, 5.0);
    CHECK(*std::min_element(c.pixels.begin(), c.pixels.end()) == 0);
    CHECK(*std::max_element(c.pixels.begin(), c.pixels.end()) == 255);
}

TEST_CASE("+-1 embedding") {
    const auto cover = synth_cover(1, 64, 5.0);
    CHECK(embed_pm1(cover, 0.0, 3) == cover);
    const auto full = embed_pm1(cover, 1.0, 3);
    for (std::size_t i = 0; i < cover.pixels.size(); ++i)
        CHECK(std::abs(int(full.pixels[i]) - int(cover.pixels[i])) == 1);
    const auto part = embed_pm1(cover, 0.4, 4);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < cover.pixels.size(); ++i) changed += part.pixels[i] != cover.pixels[i];
    // Binomial(4096, 0.4): three standard deviations are about 0.023.
    CHECK(std::abs(double(changed) / 4096.0 - 0.4) < 0.02);
    CHECK(embed_pm1(cover, 0.4, 4) == part);
    CHECK_THROWS_AS(embed_pm1(cover, 1.5, 4), ConfigError);
}

TEST_CASE("rotations") {
    const auto img = synth_cover(2, 16, 3.0);
    CHECK(rotate90(rotate90(rotate90(rotate90(img, 1), 1), 1), 1) == img);
    CHECK(rotate90(img, 4) == img);
    CHECK(rotate90(rotate90(img, 1), 3) == img);
    const auto r = rotate90(img, 1);
    CHECK(r.at(15, 0) == img.at(0, 0));  // counter-clockwise: top-left moves to bottom-left
    CHECK_THROWS(rotate90(ImageGray(3, 2), 1));
}

TEST_CASE("paired and unpaired batches") {
    const PairSet set = synth_pairs(0, 30, 16, 5.0, 0.4, 11);
    CHECK(set.size() == 30);
    const auto pb = make_paired_batch(set, 40, 5);
    CHECK(pb.images.shape().n == 40);
    CHECK(pb.half() == 20);
    CHECK(std::count(pb.labels.begin(), pb.labels.end(), 0) == 20);
    const std::size_t plane = 16 * 16;
    for (std::size_t i = 0; i < pb.half(); ++i) {
        CHECK(pb.pair_index[i] == pb.cover_index[i]);
        for (std::size_t k = 0; k < plane; ++k) {
            const float d = pb.images[(pb.half() + i) * plane + k] - pb.images[i * plane + k];
            CHECK((d == -1.0f || d == 0.0f || d == 1.0f));
        }
    }

    const auto two = make_unpaired_batch(set, 2, 3);
    CHECK(two.half() == 1);
    CHECK(two.pair_index[0] != two.cover_index[0]);

    std::set<std::size_t> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto ub = make_unpaired_batch(set, 8, s);
        std::set<std::size_t> covers(ub.cover_index.begin(), ub.cover_index.end());
        for (std::size_t i = 0; i < ub.half(); ++i) {
            CHECK(ub.pair_index[i] != ub.cover_index[i]);
            CHECK(covers.count(ub.pair_index[i]) == 0);
        }
        seen.insert(ub.cover_index.begin(), ub.cover_index.end());
        seen.insert(ub.pair_index.begin(), ub.pair_index.end());
    }
    CHECK(seen.size() == set.size());
    CHECK_THROWS(make_unpaired_batch(set, {1, 2}, {2, 3}));
    CHECK_THROWS(make_paired_batch(set, 3, 1));
}

TEST_CASE("split and manifest") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
    const auto m = split_dataset(ids, 0.5, 7);
    CHECK(m.covers("train").size() == 5);
    CHECK(m.covers("test").size() == 5);
    CHECK(split_dataset(ids, 0.5, 7) == m);
    std::reverse(ids.begin(), ids.end());
    CHECK(split_dataset(ids, 0.5, 7).covers("train") == m.covers("train"));

    std::stringstream ss;
    write_manifest(ss, m);
    CHECK(read_manifest(ss) == m);
    std::istringstream bad("seed 1\nonly three fields\n");
    CHECK_THROWS_AS(read_manifest(bad), FormatError);
}

TEST_CASE("synthetic dataset on disk") {
    const fs::path dir = scratch("synth");
    SynthConfig cfg;
    cfg.count = 12;
    cfg.size = 16;
    cfg.rates = {0.1, 0.4};
    const auto m = write_synth_dataset(cfg, dir);
    CHECK(m.payloads() == std::vector<std::string>{"pm1_0.1", "pm1_0.4"});
    std::size_t covers = 0, stegos = 0;
    for (const auto& e : m.entries) (e.role == "cover" ? covers : stegos)++;
    CHECK(covers == 12);
    CHECK(stegos == 24);
    CHECK(load_manifest(dir / "manifest.txt") == m);

    // A cover's split does not depend on the payload.
    const auto lo = load_pairs(m, dir, "train", "pm1_0.1");
    const auto hi = load_pairs(m, dir, "train", "pm1_0.4");
    CHECK(lo.ids == hi.ids);
    CHECK(lo.covers == hi.covers);
    CHECK(payload_rate("pm1_0.4") == 0.4);
    CHECK_THROWS(payload_rate("suniward"));

    const fs::path again = scratch("synth2");
    write_synth_dataset(cfg, again);
    for (const auto& e : m.entries) {
        std::ifstream a(dir / e.path, std::ios::binary), b(again / e.path, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
}

TEST_CASE("rotation augmentation") {
    const fs::path dir = scratch("aug");
    SynthConfig cfg;
    cfg.count = 8;
    cfg.size = 16;
    const auto m = write_synth_dataset(cfg, dir);
    const auto aug = augment_rotations(m);
    CHECK(aug.covers("train").size() == 4 * m.covers("train").size());
    CHECK(aug.hash("test") == m.hash("test"));
    const auto pairs = load_pairs(aug, dir, "train", "pm1_0.4");
    CHECK(pairs.size() == 4 * m.covers("train").size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        for (std::size_t k = 0; k < pairs.covers[i].pixels.size(); ++k)
            CHECK(std::abs(int(pairs.stegos[i].pixels[k]) - int(pairs.covers[i].pixels[k])) <= 1);

    const PairSet small = synth_pairs(0, 5, 16, 5.0, 0.4, 3);
    CHECK(augment_rotations(small, 0.4, 1).size() == 20);
}

TEST_CASE("ingest external stego directories") {
    const fs::path dir = scratch("ingest");
    fs::create_directories(dir / "cover");
    fs::create_directories(dir / "stego" / "hill_0.4");
    for (int i = 0; i < 6; ++i) {
        const auto c = synth_cover(std::uint64_t(i), 16, 5.0);
        const std::string name = "img" + std::to_string(i) + ".pgm";
        write_pgm(c, dir / "cover" / name);
        write_pgm(embed_pm1(c, 0.4, std::uint64_t(i)), dir / "stego" / "hill_0.4" / name);
    }
    const auto m = ingest_stego_dir(dir, 0.5, 1);
    CHECK(m.payloads() == std::vector<std::string>{"hill_0.4"});
    CHECK(m.covers("train").size() == 3);
    CHECK(load_pairs(m, dir, "test", "hill_0.4").size() == 3);
    CHECK_THROWS(load_pairs(m, dir, "test", "wow_0.4"));
}
