#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "hkd/config.hpp"
#include "hkd/netarch.hpp"
#include "hkd/persist.hpp"
#include "hkd/rng.hpp"
#include "hkd/teacher.hpp"
#include "hkd/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

hkd::TrajectoryDataset tiny_dataset() {
    hkd::GmmSpec gmm = hkd::GmmSpec::single(1, 4, 4, 0.1, 1);
    return hkd::generate_dataset(gmm, hkd::Schedule{}, 2, 3, 4, 9);
}

const std::string kEchoText =
    "model.size = 8\nmodel.levels = 2\nmodel.latent_channels = 4,8\n"
    "model.hidden_widths = 6,8\n";

hkd::Checkpoint tiny_checkpoint() {
    hkd::RunConfig run = hkd::RunConfig::from_text(kEchoText);
    hkd::HkdModel model(hkd::model_config_from(run));
    return hkd::make_checkpoint(model, run.text());
}

}  // namespace

TEST_CASE("dataset round trip is bit-exact") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_rt.hkdt");
    hkd::write_dataset(ds, path);
    auto back = hkd::read_dataset(path);
    CHECK(back.states == ds.states);
    CHECK(back.times == ds.times);
    CHECK(back.seed == ds.seed);
    CHECK(back.schedule.epsilon == ds.schedule.epsilon);
    CHECK(back.schedule.horizon == ds.schedule.horizon);

    hkd::write_dataset(back, path + ".2");
    CHECK(slurp(path) == slurp(path + ".2"));
    fs::remove(path);
    fs::remove(path + ".2");
}

TEST_CASE("dataset wrong magic names the expected magic") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_magic.hkdt");
    hkd::write_dataset(ds, path);
    auto bytes = slurp(path);
    bytes[0] = 'X';
    bytes[1] = 'X';
    spit(path, bytes);
    CHECK_THROWS_WITH_AS((void)hkd::read_dataset(path), doctest::Contains("HKDT"),
                         hkd::corruption_error);
    fs::remove(path);
}

TEST_CASE("dataset future version is an unsupported-version error") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_ver.hkdt");
    hkd::write_dataset(ds, path);
    auto bytes = slurp(path);
    bytes[4] = 2;  // version u32 little-endian
    spit(path, bytes);
    CHECK_THROWS_AS((void)hkd::read_dataset(path), hkd::unsupported_version_error);
    fs::remove(path);
}

TEST_CASE("dataset truncation reports the byte offset") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_trunc.hkdt");
    hkd::write_dataset(ds, path);
    auto bytes = slurp(path);
    // drop the last trajectory: header says 2, payload holds 1
    size_t state_bytes = ds.states.size() * 4 / 2;
    bytes.resize(bytes.size() - state_bytes);
    spit(path, bytes);
    CHECK_THROWS_WITH_AS((void)hkd::read_dataset(path), doctest::Contains("byte offset"),
                         hkd::corruption_error);
    fs::remove(path);
}

TEST_CASE("dataset trailing bytes are a corruption error") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_trail.hkdt");
    hkd::write_dataset(ds, path);
    auto bytes = slurp(path);
    bytes.push_back(0);
    spit(path, bytes);
    CHECK_THROWS_AS((void)hkd::read_dataset(path), hkd::corruption_error);
    fs::remove(path);
}

TEST_CASE("checkpoint round trip is bit-exact and echoes config") {
    auto ck = tiny_checkpoint();
    std::string path = tmp_path("hkd_rt.hkdc");
    hkd::write_checkpoint(ck, path);
    auto back = hkd::read_checkpoint(path);
    CHECK(back.config_echo == kEchoText);
    REQUIRE(back.params.size() == ck.params.size());
    for (size_t i = 0; i < ck.params.size(); ++i) {
        CHECK(back.params[i].first == ck.params[i].first);
        CHECK(back.params[i].second.vec() == ck.params[i].second.vec());
    }
    hkd::write_checkpoint(back, path + ".2");
    CHECK(slurp(path) == slurp(path + ".2"));
    fs::remove(path);
    fs::remove(path + ".2");
}

TEST_CASE("checkpoint shape contradiction names the parameter") {
    auto ck = tiny_checkpoint();
    // config echo says 8x8 / levels 2; claim a wrong shape for one parameter
    for (auto& [name, t] : ck.params)
        if (name == "enc.l1.conv1.b") t = hkd::Tensor::zeros({3});
    std::string path = tmp_path("hkd_shape.hkdc");
    hkd::write_checkpoint(ck, path);
    CHECK_THROWS_WITH_AS((void)hkd::read_checkpoint(path),
                         doctest::Contains("enc.l1.conv1.b"), hkd::format_error);
    fs::remove(path);
}

TEST_CASE("checkpoint declaring over 4 GiB is rejected without overflow") {
    // handcrafted header: one parameter claiming 2^30 x 8 floats
    std::vector<char> bytes;
    auto u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(char(v >> (8 * i)));
    };
    bytes.insert(bytes.end(), {'H', 'K', 'D', 'C'});
    u32(1);
    u32(0);  // empty config echo
    u32(1);  // one parameter
    u32(3);
    bytes.insert(bytes.end(), {'b', 'i', 'g'});
    u32(2);           // rank
    u32(1u << 30);    // dims
    u32(8);
    std::string path = tmp_path("hkd_big.hkdc");
    spit(path, bytes);
    CHECK_THROWS_WITH_AS((void)hkd::read_checkpoint(path), doctest::Contains("4 GiB"),
                         hkd::corruption_error);
    fs::remove(path);
}

TEST_CASE("writes are atomic: no temp file left, destination valid") {
    auto ds = tiny_dataset();
    std::string path = tmp_path("hkd_atomic.hkdt");
    hkd::write_dataset(ds, path);
    CHECK_FALSE(fs::exists(path + ".tmp"));
    CHECK_NOTHROW((void)hkd::read_dataset(path));
    fs::remove(path);
}

TEST_CASE("missing files raise io errors") {
    CHECK_THROWS_AS((void)hkd::read_dataset("/nonexistent/x.hkdt"), hkd::io_error);
    CHECK_THROWS_AS((void)hkd::read_checkpoint("/nonexistent/x.hkdc"), hkd::io_error);
}

TEST_CASE("checkpoint param lookup") {
    auto ck = tiny_checkpoint();
    CHECK_NOTHROW((void)ck.param("enc.l1.conv1.w"));
    CHECK_THROWS_AS((void)ck.param("enc.l9.conv1.w"), hkd::format_error);
}
