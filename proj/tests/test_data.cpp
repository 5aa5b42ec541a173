#include <gtest/gtest.h>

#include <set>

#include "icps/data.hpp"
#include "icps/image_io.hpp"
#include "icps/metrics.hpp"
#include "test_support.hpp"

using namespace icps;
using namespace icps::testing;
namespace fs = std::filesystem;

namespace {

void write_pair(const fs::path& root, const std::string& id, int w, int h, std::uint8_t fg = 255) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 90)};
  Image8 msk{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0)};
  for (int y = h / 4; y < h / 2; ++y)
    for (int x = w / 4; x < w / 2; ++x) msk.pixels[static_cast<std::size_t>(y) * w + x] = fg;
  write_png(root / "images" / (id + ".png"), img);
  write_png(root / "masks" / (id + ".png"), msk);
}

}  // namespace

TEST(Multiscale, SnapsToMultiplesOf32) {
  EXPECT_EQ(multiscale_size(352, 0.75), 256);  // 264
  EXPECT_EQ(multiscale_size(352, 1.0), 352);
  EXPECT_EQ(multiscale_size(352, 1.25), 448);  // 440
  EXPECT_EQ(multiscale_size(96, 0.75), 64);    // 72
  EXPECT_EQ(multiscale_size(96, 1.25), 128);   // 120
  EXPECT_THROW(multiscale_size(32, 0.25), ContractViolation);
  EXPECT_THROW(multiscale_size(100, 1.0), ContractViolation);
}

TEST(Multiscale, RescaleKeepsMasksBinary) {
  SynthConfig cfg;
  const SynthSample s = synth_render(cfg, 0);
  SampleBatch b;
  b.images = Tensor<float>(1, 3, 96, 96);
  b.masks = Tensor<float>(1, 1, 96, 96);
  for (int i = 0; i < 96 * 96; ++i) b.masks.data()[i] = s.mask[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
  for (Index size : {64, 128}) {
    const SampleBatch r = rescale_batch(b, size);
    EXPECT_EQ(r.images.shape(), (Shape{1, 3, size, size}));
    for (Index i = 0; i < r.masks.size(); ++i) ASSERT_TRUE(r.masks.data()[i] == 0.0f || r.masks.data()[i] == 1.0f);
    EXPECT_GT(r.masks.vec().sum(), 0.0f);
  }
}

TEST(Synth, SeededGenerationIsByteIdentical) {
  TempDir a("synth_a"), b("synth_b"), c("synth_c");
  SynthConfig cfg;
  cfg.count = 4;
  cfg.canvas = 64;
  cfg.seed = 3;
  synth_generate(cfg, a.path());
  synth_generate(cfg, b.path());
  cfg.seed = 4;
  synth_generate(cfg, c.path());
  for (const char* sub : {"images", "masks"})
    for (const auto& e : fs::directory_iterator(a / sub)) {
      const fs::path rel = fs::path(sub) / e.path().filename();
      EXPECT_EQ(read_file(e.path()), read_file(b.path() / rel)) << rel;
      if (std::string(sub) == "images") EXPECT_NE(read_file(e.path()), read_file(c.path() / rel)) << rel;
    }
  EXPECT_TRUE(fs::exists(a / "synth_config.json"));
  // sample i does not depend on how many samples are generated
  SynthConfig more = cfg;
  more.count = 50;
  EXPECT_EQ(synth_render(cfg, 2).rgb, synth_render(more, 2).rgb);
}

TEST(Synth, SingleBlobCoverageAndConnectivity) {
  SynthConfig cfg;
  cfg.blob_count_range = {1, 1};
  for (int i = 0; i < 40; ++i) {
    const SynthSample s = synth_render(cfg, i);
    std::vector<std::uint8_t> bin(s.mask.size());
    std::size_t fg = 0;
    for (std::size_t k = 0; k < s.mask.size(); ++k) {
      ASSERT_TRUE(s.mask[k] == 0 || s.mask[k] == 255);
      bin[k] = s.mask[k] ? 1 : 0;
      fg += bin[k];
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(s.mask.size());
    EXPECT_GE(frac, 0.03) << i;
    EXPECT_LE(frac, 0.20) << i;
    int n = 0;
    label_components(std::span<const std::uint8_t>(bin), cfg.canvas, cfg.canvas, n);
    EXPECT_EQ(n, 1) << i;
  }
}

TEST(Synth, MultipleBlobsStaySeparate) {
  SynthConfig cfg;
  cfg.blob_count_range = {3, 3};
  cfg.blob_radius_range = {0.08, 0.1};
  int n = 0;
  const SynthSample s = synth_render(cfg, 1);
  std::vector<std::uint8_t> bin(s.mask.begin(), s.mask.end());
  for (auto& v : bin) v = v ? 1 : 0;
  label_components(std::span<const std::uint8_t>(bin), cfg.canvas, cfg.canvas, n);
  EXPECT_EQ(n, 3);
}

TEST(Synth, RejectsEmptyAndTinyConfigurations) {
  SynthConfig cfg;
  cfg.count = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("size-0 dataset"), std::string::npos);
  }
  cfg.count = 1;
  cfg.canvas = 16;
  EXPECT_THROW(cfg.validate(), ContractViolation);
}

TEST(Loader, ResizesNonSquareInputAndBinarizesMasks) {
  TempDir d("loader");
  write_pair(d.path(), "a", 384, 288);
  write_pair(d.path(), "b", 40, 30);
  const Dataset ds = load_dataset(d.path(), "", 352);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].id, "a");
  EXPECT_EQ(ds[0].image.shape(), (Shape{1, 3, 352, 352}));
  EXPECT_EQ(ds[0].mask.shape(), (Shape{1, 1, 352, 352}));
  std::set<float> values(ds[0].mask.data(), ds[0].mask.data() + ds[0].mask.size());
  EXPECT_EQ(values, (std::set<float>{0.0f, 1.0f}));
  EXPECT_NEAR(ds[0].image.vec().cast<double>().mean(), 90.0 / 255.0, 1e-6);
  // masks exported as {0,1} rather than {0,255} also load
  TempDir e("loader01");
  write_pair(e.path(), "c", 64, 64, 1);
  EXPECT_EQ(load_dataset(e.path(), "", 64)[0].mask.vec().sum(), 16.0f * 16.0f);
  TempDir f("loader128");
  write_pair(f.path(), "c", 64, 64, 128);
  EXPECT_EQ(load_dataset(f.path(), "", 64)[0].mask.vec().sum(), 16.0f * 16.0f);
}

TEST(Loader, ReportsPairingProblemsAndEmptyDirectories) {
  TempDir d("pairing");
  write_pair(d.path(), "a", 32, 32);
  fs::remove(d / "masks/a.png");
  EXPECT_THROW(load_dataset(d.path(), "", 32), IoError);

  TempDir e("orphan");
  write_pair(e.path(), "a", 32, 32);
  fs::copy_file(e / "masks/a.png", e / "masks/z.png");
  try {
    load_dataset(e.path(), "", 32);
    FAIL();
  } catch (const IoError& err) {
    EXPECT_NE(std::string(err.what()).find("z.png"), std::string::npos);
  }

  TempDir f("empty");
  fs::create_directories(f / "images");
  fs::create_directories(f / "masks");
  try {
    load_dataset(f.path(), "", 32);
    FAIL();
  } catch (const IoError& err) {
    EXPECT_NE(std::string(err.what()).find("size-0 dataset"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(f.path(), "train", 32), IoError);
}

TEST(Loader, SplitIsSeededDisjointAndComplete) {
  std::vector<Sample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back({"s" + std::to_string(100 + i), Tensor<float>(1, 3, 32, 32), Tensor<float>(1, 1, 32, 32)});
  const Dataset all(samples);
  const auto [tr, va] = split_dataset(all, 0.1, 5);
  const auto [tr2, va2] = split_dataset(all, 0.1, 5);
  EXPECT_EQ(va.size(), 2u);
  EXPECT_EQ(tr.size(), 18u);
  std::set<std::string> ids;
  for (const auto& s : tr.samples()) ids.insert(s.id);
  for (const auto& s : va.samples()) EXPECT_TRUE(ids.insert(s.id).second);
  EXPECT_EQ(ids.size(), 20u);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va[i].id, va2[i].id);
}

TEST(Loader, BatchesPreserveOrderAndShortLastBatch) {
  std::vector<Sample> samples;
  for (int i = 0; i < 5; ++i) {
    Sample s{"s" + std::to_string(i), Tensor<float>::constant({1, 3, 8, 8}, static_cast<float>(i)), Tensor<float>(1, 1, 8, 8)};
    samples.push_back(s);
  }
  const auto batches = Dataset(samples).batches(2);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 1);
  EXPECT_EQ(batches[1].ids, (std::vector<std::string>{"s2", "s3"}));
  EXPECT_EQ(batches[1].images(1, 0, 0, 0), 3.0f);
}
