#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "corrmlp/checkpoint.hpp"

using namespace corrmlp;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  fs::path d = fs::temp_directory_path() / "corrmlp_test_ckpt";
  fs::create_directories(d);
  return d;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void put_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

CheckpointErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("no CheckpointError thrown");
  return CheckpointErrorKind::Io;
}

CorrMLPConfig tiny() {
  CorrMLPConfig c;
  c.enc_channels = {2, 2, 2, 4};
  c.block.branch_windows = {3, 5};
  return c;
}

}  // namespace

TEST_CASE("save, load and re-save are lossless") {
  const fs::path d = tmp_dir();
  CorrMLP a(tiny(), 3);
  CheckpointInfo info;
  info.iteration = 40;
  info.val_score = 0.625;
  info.extra = {{"lr", 1e-4}};
  save_checkpoint(d / "a.ckpt", a, info);

  CheckpointInfo got;
  CorrMLP b = load_model(d / "a.ckpt", &got);
  CHECK(b.config() == a.config());
  CHECK(got.iteration == 40);
  CHECK(got.val_score == 0.625);
  CHECK(got.extra.at("lr").get<double>() == 1e-4);
  const auto& pa = a.params().params();
  const auto& pb = b.params().params();
  REQUIRE(pa.size() == pb.size());
  bool rounded = true;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    for (int64_t j = 0; j < pa[i].value().numel(); ++j)
      rounded = rounded && pb[i].value()[j] == static_cast<double>(static_cast<float>(pa[i].value()[j]));
  }
  CHECK(rounded);
  save_checkpoint(d / "b.ckpt", b, got);
  CHECK(bytes_of(d / "a.ckpt") == bytes_of(d / "b.ckpt"));

  nlohmann::json m = read_checkpoint_manifest(d / "a.ckpt");
  CHECK(m.at("param_count").get<int64_t>() == a.params().scalar_count());
  CHECK(m.at("params").size() == pa.size());
}

TEST_CASE("load into an existing model") {
  const fs::path d = tmp_dir();
  CorrMLP a(tiny(), 1), b(tiny(), 2);
  save_checkpoint(d / "x.ckpt", a, {});
  load_checkpoint(d / "x.ckpt", b);
  save_checkpoint(d / "y.ckpt", b, {});
  CHECK(bytes_of(d / "x.ckpt") == bytes_of(d / "y.ckpt"));

  CorrMLPConfig other = tiny();
  other.use_correlation_layer = false;
  CorrMLP c(other, 1);
  CHECK(kind_of([&] { load_checkpoint(d / "x.ckpt", c); }) == CheckpointErrorKind::ConfigMismatch);
}

TEST_CASE("corrupt checkpoints raise distinct errors") {
  const fs::path d = tmp_dir();
  CorrMLP a(tiny(), 1);
  save_checkpoint(d / "g.ckpt", a, {});
  const auto good = bytes_of(d / "g.ckpt");

  auto magic = good;
  magic[1] = 'Z';
  put_bytes(d / "m.ckpt", magic);
  CHECK(kind_of([&] { load_model(d / "m.ckpt"); }) == CheckpointErrorKind::BadMagic);

  auto version = good;
  version[4] = 7;
  put_bytes(d / "v.ckpt", version);
  CHECK(kind_of([&] { load_model(d / "v.ckpt"); }) == CheckpointErrorKind::VersionMismatch);

  auto trunc = good;
  trunc.resize(trunc.size() - 4);
  put_bytes(d / "t.ckpt", trunc);
  CHECK(kind_of([&] { load_model(d / "t.ckpt"); }) == CheckpointErrorKind::Truncated);

  auto manifest = good;
  manifest[13] = '#';
  put_bytes(d / "j.ckpt", manifest);
  CHECK(kind_of([&] { load_model(d / "j.ckpt"); }) == CheckpointErrorKind::BadManifest);

  CHECK(kind_of([&] { load_model(d / "missing.ckpt"); }) == CheckpointErrorKind::Io);

  // rename one parameter in the manifest, keeping the length
  std::string s(good.begin(), good.end());
  const size_t at = s.find("enc.l1");
  REQUIRE(at != std::string::npos);
  s[at + 5] = '9';
  put_bytes(d / "n.ckpt", std::vector<char>(s.begin(), s.end()));
  CHECK(kind_of([&] { load_model(d / "n.ckpt"); }) == CheckpointErrorKind::NameMismatch);
}
