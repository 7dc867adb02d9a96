#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpkd/checkpoint.hpp"
#include "support.hpp"

using namespace mpkd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Checkpoint sample() {
  Checkpoint c;
  c.student = NetworkParams::initialize(5, 2, 4, 3, 0.0);
  c.align = testing::random_align(4, 3);
  c.meta.entities = Vocabulary::numbered(5, "e").names();
  c.meta.relations = {"r0", "r1"};
  c.meta.config_digest = "d1";
  c.meta.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("save, load, save is byte identical") {
    const auto dir = fs::temp_directory_path() / "mpkd_unit_checkpoint";
    fs::create_directories(dir);
    const auto c = sample();
    save_checkpoint(dir / "a.mpkd", c);
    const auto back = load_checkpoint(dir / "a.mpkd");
    save_checkpoint(dir / "b.mpkd", back);
    CHECK(slurp(dir / "a.mpkd") == slurp(dir / "b.mpkd"));
    CHECK(slurp(dir / "a.mpkd.json") == slurp(dir / "b.mpkd.json"));
    CHECK(slurp(dir / "a.mpkd").rfind("MPKD1", 0) == 0);
    CHECK(back.meta.entities == c.meta.entities);
    CHECK(back.meta.dim == 4);
    // float32 storage
    CHECK(back.student.entity_emb(2, 1) == static_cast<double>(static_cast<float>(c.student.entity_emb(2, 1))));

    std::string bytes = slurp(dir / "a.mpkd");
    bytes[0] = 'X';
    std::ofstream(dir / "bad.mpkd", std::ios::binary) << bytes;
    fs::copy_file(dir / "a.mpkd.json", dir / "bad.mpkd.json", fs::copy_options::overwrite_existing);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.mpkd"), doctest::Contains("bad magic"), Error);

    bytes = slurp(dir / "a.mpkd");
    bytes[bytes.size() - 1] ^= 0x1;
    std::ofstream(dir / "flip.mpkd", std::ios::binary) << bytes;
    fs::copy_file(dir / "a.mpkd.json", dir / "flip.mpkd.json", fs::copy_options::overwrite_existing);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "flip.mpkd"), doctest::Contains("digest"), Error);

    std::ofstream(dir / "short.mpkd", std::ios::binary) << slurp(dir / "a.mpkd").substr(0, 40);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.mpkd"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.mpkd"), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("metadata json is stable") {
    auto m = sample().meta;
    m.dim = 4;
    m.payload_digest = "ff";
    const auto j = checkpoint_meta_json(m);
    CHECK(j == checkpoint_meta_json(m));
    CHECK(j.find("\"format\": \"MPKD1\"") != std::string::npos);
    CHECK(j.find("\"entity_count\": 5") != std::string::npos);
  }
}
