#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "pnpttt/config_file.hpp"
#include "pnpttt/io.hpp"
#include "pnpttt/synth.hpp"

using namespace pnpttt;

namespace {

std::string scratch_path(const std::string& name) {
    static const std::filesystem::path dir = [] {
        std::filesystem::path p = std::filesystem::temp_directory_path() / "pnpttt_io_test";
        std::filesystem::create_directories(p);
        return p;
    }();
    return (dir / name).string();
}

DenoiserParams sample_params(uint64_t seed) {
    DenoiserConfig cfg;
    cfg.depth = 3;
    cfg.channels = 4;
    cfg.kernel_size = 3;
    cfg.residual = true;
    cfg.lipschitz_target = 0.9;
    cfg.power_iters = 2;
    cfg.sn_ref_size = 8;
    return spectral_normalize(init_params(cfg, seed));
}

bool params_identical(const DenoiserParams& a, const DenoiserParams& b) {
    if (a.config.depth != b.config.depth || a.config.channels != b.config.channels ||
        a.config.kernel_size != b.config.kernel_size || a.config.residual != b.config.residual ||
        a.config.lipschitz_target != b.config.lipschitz_target ||
        a.config.power_iters != b.config.power_iters ||
        a.config.sn_ref_size != b.config.sn_ref_size)
        return false;
    if (a.layers.size() != b.layers.size() || a.sn_state.size() != b.sn_state.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weights != b.layers[l].weights) return false;
        if (a.layers[l].bias != b.layers[l].bias) return false;
        if (a.sn_state[l].u != b.sn_state[l].u) return false;
        if (a.sn_state[l].sigma != b.sn_state[l].sigma) return false;
    }
    return true;
}

}  // namespace

TEST(Fnv1a, KnownVectors) {
    EXPECT_EQ(fnv1a64(nullptr, 0), 0xcbf29ce484222325ull);
    const uint8_t a = 'a';
    EXPECT_EQ(fnv1a64(&a, 1), 0xaf63dc4c8601ec8cull);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    DenoiserParams p = sample_params(51);
    const std::string path = scratch_path("ckpt_roundtrip.bin");
    save_checkpoint(path, p);
    DenoiserParams q = load_checkpoint(path);
    EXPECT_TRUE(params_identical(p, q));

    // re-serializing the loaded params reproduces the file byte for byte
    const std::string path2 = scratch_path("ckpt_roundtrip2.bin");
    save_checkpoint(path2, q);
    EXPECT_EQ(detail::read_file(path), detail::read_file(path2));
}

TEST(Checkpoint, FileStartsWithMagic) {
    DenoiserParams p = sample_params(52);
    const std::string path = scratch_path("ckpt_magic.bin");
    save_checkpoint(path, p);
    auto bytes = detail::read_file(path);
    ASSERT_GE(bytes.size(), 8u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "PNPTTT01");
}

TEST(Checkpoint, CorruptionIsDetected) {
    DenoiserParams p = sample_params(53);
    const std::string path = scratch_path("ckpt_corrupt.bin");
    save_checkpoint(path, p);
    auto bytes = detail::read_file(path);
    bytes[bytes.size() / 2] ^= 0x40;
    detail::write_file(path, bytes);
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);

    // truncation is also caught
    save_checkpoint(path, p);
    auto full = detail::read_file(path);
    full.resize(full.size() - 3);
    detail::write_file(path, full);
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);

    EXPECT_THROW(load_checkpoint(scratch_path("does_not_exist.bin")), std::runtime_error);
}

TEST(Checkpoint, RejectsWrongMagic) {
    Dataset ds;
    ds.kind = DatasetKind::phantom;
    ds.images.push_back(gen_phantom(32, 1));
    const std::string path = scratch_path("not_a_ckpt.bin");
    save_dataset(path, ds);
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(DatasetIo, RoundTripAndSizeFormula) {
    Dataset ds;
    ds.kind = DatasetKind::texture;
    ds.seed = 99;
    for (int i = 0; i < 3; ++i) ds.images.push_back(gen_texture(32, 200 + i));
    const std::string path = scratch_path("dataset.bin");
    save_dataset(path, ds);

    // 33-byte header + payload + 8-byte checksum
    const auto bytes = detail::read_file(path);
    EXPECT_EQ(bytes.size(), 41u + 3u * 32u * 32u * 8u);

    Dataset back = load_dataset(path);
    EXPECT_EQ(static_cast<int>(back.kind), static_cast<int>(ds.kind));
    EXPECT_EQ(back.seed, 99u);
    ASSERT_EQ(back.images.size(), 3u);
    for (size_t i = 0; i < 3; ++i) EXPECT_EQ(back.images[i].data, ds.images[i].data);
}

TEST(DatasetIo, EmptyDatasetAndShapeMismatch) {
    Dataset empty;
    const std::string path = scratch_path("empty.bin");
    save_dataset(path, empty);
    EXPECT_EQ(detail::read_file(path).size(), 41u);
    Dataset back = load_dataset(path);
    EXPECT_TRUE(back.images.empty());

    Dataset bad;
    bad.images.push_back(RealImage(32, 32));
    bad.images.push_back(RealImage(16, 16));
    EXPECT_THROW(save_dataset(scratch_path("bad.bin"), bad), std::invalid_argument);
}

TEST(Pgm, RoundTripOnQuantizedValues) {
    RealImage img(5, 7);
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<double>((i * 7) % 256) / 255.0;
    const std::string path = scratch_path("img.pgm");
    write_pgm(path, img);
    RealImage back = read_pgm(path);
    ASSERT_EQ(back.height, 5);
    ASSERT_EQ(back.width, 7);
    for (size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-12);
}

TEST(Pgm, ClampsOutOfRangeValues) {
    RealImage img(1, 3);
    img.data = {-0.5, 0.5, 2.0};
    const std::string path = scratch_path("clamp.pgm");
    write_pgm(path, img);
    RealImage back = read_pgm(path);
    EXPECT_EQ(back.data[0], 0.0);
    EXPECT_NEAR(back.data[1], 0.5, 1.0 / 255.0);
    EXPECT_EQ(back.data[2], 1.0);
}

TEST(Pgm, ParsesCommentsAndRejectsGarbage) {
    const std::string path = scratch_path("comment.pgm");
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n# a comment line\n2 # trailing comment\n2\n255\n";
        f.put(static_cast<char>(0));
        f.put(static_cast<char>(255));
        f.put(static_cast<char>(128));
        f.put(static_cast<char>(64));
    }
    RealImage img = read_pgm(path);
    ASSERT_EQ(img.height, 2);
    ASSERT_EQ(img.width, 2);
    EXPECT_EQ(img.data[0], 0.0);
    EXPECT_EQ(img.data[1], 1.0);

    const std::string bad = scratch_path("bad.pgm");
    {
        std::ofstream f(bad, std::ios::binary);
        f << "P2\n2 2\n255\n0 0 0 0\n";
    }
    EXPECT_THROW(read_pgm(bad), std::runtime_error);
}

TEST(CsvField, QuotingRules) {
    EXPECT_EQ(csv_field("plain"), "plain");
    EXPECT_EQ(csv_field(""), "");
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv_field("line\nbreak"), "\"line\nbreak\"");
    EXPECT_EQ(csv_field("1.5"), "1.5");
}

TEST(ConfigMap, ParsesTypedValues) {
    ConfigMap cfg = ConfigMap::parse_text(
        "# top comment\n"
        "experiment.id = shift   # inline comment\n"
        "pnp.gamma=1.5\n"
        "pnp.max_iter = 80\n"
        "ttt.renormalize = yes\n"
        "experiment.ratios = 0.1, 0.2,0.3\n"
        "pnp.gamma = 2.5\n");  // later assignment wins
    EXPECT_EQ(cfg.get_string("experiment.id", ""), "shift");
    EXPECT_DOUBLE_EQ(cfg.get_double("pnp.gamma", 0.0), 2.5);
    EXPECT_EQ(cfg.get_int("pnp.max_iter", 0), 80);
    EXPECT_TRUE(cfg.get_bool("ttt.renormalize", false));
    const std::vector<double> want{0.1, 0.2, 0.3};
    EXPECT_EQ(cfg.get_double_list("experiment.ratios", {}), want);
    // fallbacks for absent keys
    EXPECT_EQ(cfg.get_string("missing", "dflt"), "dflt");
    EXPECT_DOUBLE_EQ(cfg.get_double("missing", 4.5), 4.5);
    EXPECT_FALSE(cfg.get_bool("missing", false));
    EXPECT_TRUE(cfg.has("pnp.gamma"));
    EXPECT_FALSE(cfg.has("pnp.tol"));
}

TEST(ConfigMap, ErrorsCarryContext) {
    try {
        ConfigMap::parse_text("ok = 1\nbroken line\n");
        FAIL() << "expected parse failure";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    ConfigMap cfg = ConfigMap::parse_text("x = notanumber\nb = maybe\nl = ,\n");
    EXPECT_THROW(cfg.get_double("x", 0.0), std::runtime_error);
    EXPECT_THROW(cfg.get_int("x", 0), std::runtime_error);
    EXPECT_THROW(cfg.get_bool("b", true), std::runtime_error);
    EXPECT_THROW(cfg.get_double_list("l", {}), std::runtime_error);
    EXPECT_THROW(ConfigMap::parse_text("= 5\n"), std::runtime_error);
    EXPECT_THROW(ConfigMap::parse_file(scratch_path("missing.cfg")), std::runtime_error);
}

TEST(ConfigMap, SetOverridesParsedValue) {
    ConfigMap cfg = ConfigMap::parse_text("a = 1\n");
    cfg.set("a", "2");
    cfg.set("b", "3");
    EXPECT_EQ(cfg.get_int("a", 0), 2);
    EXPECT_EQ(cfg.get_int("b", 0), 3);
    EXPECT_EQ(cfg.items().size(), 2u);
}
