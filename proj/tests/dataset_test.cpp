/* Copyright 2026 The pvseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "pvseg/dataset.hpp"
#include "pvseg/synthetic.hpp"
#include "test_util.hpp"

namespace pvseg {
namespace {

using testing::TempDir;

TEST(ClassCatalog, BackgroundFirstAndNoDuplicates) {
  const auto el = ClassCatalog::el_defects();
  EXPECT_EQ(el.total_classes(), 5);
  EXPECT_EQ(el.name(0), "background");
  EXPECT_EQ(el.num_defect_classes(), 4);
  EXPECT_THROW(ClassCatalog({"background", "crack", "crack"}), InvalidArgument);
  EXPECT_THROW(ClassCatalog(std::vector<std::string>{}), InvalidArgument);
  EXPECT_EQ(ClassCatalog::synthetic(3).joined(), "background,crack,corrosion,interconnect");
  EXPECT_EQ(ClassCatalog::with_size(7).name(6), "class6");
  EXPECT_THROW(ClassCatalog::synthetic(5), InvalidArgument);
}

TEST(ImageIo, RoundTripGrayAndColor) {
  TempDir dir;
  ImageSample gray("g", 5, 4);
  ImageSample color("c", 5, 4);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) {
      const float v = static_cast<float>((y * 4 + x) * 10) / 255.0f;
      for (int c = 0; c < 3; ++c) gray.at(y, x, c) = v;
      color.at(y, x, 0) = v;
      color.at(y, x, 1) = 1.0f - v;
      color.at(y, x, 2) = 0.5f;
    }
  }
  save_image(gray, dir / "g.png");
  save_image(color, dir / "c.png");
  const ImageSample g = load_image(dir / "g.png");
  const ImageSample c = load_image(dir / "c.png");
  EXPECT_EQ(g.id, "g");
  ASSERT_EQ(g.pixels.size(), gray.pixels.size());
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    EXPECT_NEAR(g.pixels[i], gray.pixels[i], 0.5 / 255.0);
    EXPECT_NEAR(c.pixels[i], color.pixels[i], 0.5 / 255.0 + 1e-6);
  }
  EXPECT_THROW(load_image(dir / "missing.png"), DatasetError);
}

TEST(MaskIo, RoundTripAndValidation) {
  TempDir dir;
  MaskSample m("m", 3, 3);
  m.at(1, 1) = 2;
  m.at(2, 0) = 3;
  save_mask(m, dir / "m.png");
  const MaskSample r = load_mask(dir / "m.png");
  EXPECT_EQ(r.labels, m.labels);
  ImageSample img("m", 3, 3);
  EXPECT_NO_THROW(validate_pair(img, r, 3));
  EXPECT_THROW(validate_pair(img, r, 2), DatasetError);
  EXPECT_THROW(validate_pair(ImageSample("m", 3, 4), r, 3), DatasetError);
}

TEST(Resize, MaskNearestNeverBlends) {
  MaskSample m("m", 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) m.at(y, x) = static_cast<std::uint8_t>(x < 2 ? 1 : 3);
  }
  const MaskSample up = resize_mask(m, 9, 9);
  std::set<int> values(up.labels.begin(), up.labels.end());
  EXPECT_EQ(values, (std::set<int>{1, 3}));
  const MaskSample down = resize_mask(m, 2, 2);
  EXPECT_EQ(down.at(0, 0), 1);
  EXPECT_EQ(down.at(1, 1), 3);
}

TEST(Resize, ImageConstantStaysConstant) {
  ImageSample img("i", 7, 5, 0.25f);
  const ImageSample r = resize_image(img, 11, 3);
  for (float v : r.pixels) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Crop, WindowsStayInside) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const CropWindow w = random_crop_window(20, 30, 16, rng);
    EXPECT_GE(w.y, 0);
    EXPECT_GE(w.x, 0);
    EXPECT_LE(w.y + 16, 20);
    EXPECT_LE(w.x + 16, 30);
  }
  const CropWindow c = center_crop_window(20, 30, 10);
  EXPECT_EQ(c.y, 5);
  EXPECT_EQ(c.x, 10);
  EXPECT_THROW(center_crop_window(8, 8, 9), InvalidArgument);
}

TEST(Crop, ImageAndMaskAlign) {
  ImageSample img("i", 6, 6);
  MaskSample m("i", 6, 6);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      img.at(y, x, 0) = static_cast<float>(y * 6 + x);
      m.at(y, x) = static_cast<std::uint8_t>(y * 6 + x);
    }
  }
  const CropWindow w{1, 2, 3, 3};
  const ImageSample ci = crop_image(img, w);
  const MaskSample cm = crop_mask(m, w);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) EXPECT_EQ(static_cast<int>(ci.at(y, x, 0)), cm.at(y, x));
  }
}

TEST(Batch, PacksChannelsFirst) {
  ImageSample a("a", 2, 2), b("b", 2, 2);
  a.at(1, 0, 2) = 0.75f;
  const Tensor<float> t = to_batch({&a, &b});
  EXPECT_EQ(t.shape(), (std::array<int, 4>{2, 3, 2, 2}));
  EXPECT_FLOAT_EQ(t(0, 2, 1, 0), 0.75f);
  ImageSample c("c", 3, 2);
  EXPECT_THROW(to_batch({&a, &c}), ShapeMismatch);
}

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int i = 0; i < 4; ++i) {
      const std::string id = "img" + std::to_string(i);
      save_image(ImageSample(id, 4, 4, 0.5f), dir / (id + ".png"));
      save_mask(MaskSample(id, 4, 4), dir / (id + "_m.png"));
    }
  }
  void write(const std::string& body) {
    std::ofstream(dir / "m.tsv") << body;
  }
  TempDir dir;
};

TEST_F(ManifestTest, ParsesRowsAndMetadata) {
  write(
      "# classes: background,crack\n"
      "# split_seed: 9\n"
      "labeled\timg0.png\timg0_m.png\n"
      "\n"
      "unlabeled\timg1.png\t-\n");
  const DatasetManifest m = load_manifest(dir / "m.tsv");
  ASSERT_EQ(m.num_labeled(), 1u);
  ASSERT_EQ(m.num_unlabeled(), 1u);
  EXPECT_EQ(m.split_seed, 9u);
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"background", "crack"}));
  EXPECT_EQ(m.labeled[0].image_path, (dir / "img0.png").lexically_normal().string());
}

TEST_F(ManifestTest, RejectsMalformedRows) {
  write("labeled\timg0.png\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  write("labeled\timg0.png\t-\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  write("unlabeled\timg0.png\timg0_m.png\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  write("labeled\tnope.png\timg0_m.png\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  write("labeled\timg0.png\timg0_m.png\nunlabeled\timg0.png\t-\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  write("validation\timg0.png\t-\n");
  EXPECT_THROW(load_manifest(dir / "m.tsv"), DatasetError);
  EXPECT_THROW(load_manifest(dir / "absent.tsv"), DatasetError);
}

TEST_F(ManifestTest, SaveLoadRoundTrip) {
  DatasetManifest m;
  for (int i = 0; i < 3; ++i) {
    const std::string id = "img" + std::to_string(i);
    m.labeled.push_back({(dir / (id + ".png")).string(), (dir / (id + "_m.png")).string()});
  }
  m.unlabeled.push_back((dir / "img3.png").string());
  m.class_names = {"background", "crack"};
  m.split_seed = 4;
  save_manifest(m, dir / "out.tsv");
  const DatasetManifest r = load_manifest(dir / "out.tsv");
  EXPECT_EQ(r.labeled, m.labeled);
  EXPECT_EQ(r.unlabeled, m.unlabeled);
  EXPECT_EQ(r.class_names, m.class_names);
  EXPECT_EQ(r.split_seed, 4u);
}

std::vector<LabeledPair> pairs(int n) {
  std::vector<LabeledPair> out;
  for (int i = 0; i < n; ++i) out.push_back({"i" + std::to_string(i), "m" + std::to_string(i)});
  return out;
}

TEST(Split, SizesAndDeterminism) {
  const auto all = pairs(200);
  const LabeledSplit a = split_labeled_unlabeled(all, 0.2, 7);
  const LabeledSplit b = split_labeled_unlabeled(all, 0.2, 7);
  const LabeledSplit c = split_labeled_unlabeled(all, 0.2, 8);
  EXPECT_EQ(a.labeled.size(), 40u);
  EXPECT_EQ(a.unlabeled.size(), 160u);
  EXPECT_EQ(a.labeled, b.labeled);
  EXPECT_NE(a.labeled, c.labeled);
  std::set<std::string> seen;
  for (const auto& p : a.labeled) seen.insert(p.image_path);
  for (const auto& u : a.unlabeled) seen.insert(u);
  EXPECT_EQ(seen.size(), 200u);
}

TEST(Split, InvalidFractions) {
  EXPECT_THROW(split_labeled_unlabeled(pairs(10), 0.0, 1), InvalidArgument);
  EXPECT_THROW(split_labeled_unlabeled(pairs(10), 1.5, 1), InvalidArgument);
  EXPECT_THROW(split_labeled_unlabeled(pairs(10), 0.01, 1), InvalidArgument);
  EXPECT_EQ(split_labeled_unlabeled(pairs(10), 1.0, 1).unlabeled.size(), 0u);
}

TEST(Split, ApplySplitKeepsExistingUnlabeled) {
  DatasetManifest m;
  m.labeled = pairs(10);
  m.unlabeled = {"extra"};
  const DatasetManifest s = apply_split(m, 0.3, 2);
  EXPECT_EQ(s.num_labeled(), 3u);
  EXPECT_EQ(s.num_unlabeled(), 8u);
  EXPECT_EQ(s.unlabeled.back(), "extra");
  EXPECT_DOUBLE_EQ(s.labeled_fraction, 0.3);
}

TEST(Sampler, EachPassVisitsEveryItemOnce) {
  MinibatchSampler s(5, 12, 3);
  std::multiset<std::size_t> labeled;
  for (int k = 0; k < 3; ++k) {
    const auto idx = s.next(5);
    labeled.insert(idx.labeled.begin(), idx.labeled.end());
    EXPECT_EQ(idx.unlabeled.size(), 5u);
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(labeled.count(i), 3u);
}

TEST(Sampler, RestoreResumesExactly) {
  MinibatchSampler a(7, 9, 5);
  for (int k = 0; k < 4; ++k) a.next(3);
  const SamplerState st = a.state();
  MinibatchSampler b(7, 9, 5);
  b.restore(st);
  for (int k = 0; k < 10; ++k) {
    const auto x = a.next(3);
    const auto y = b.next(3);
    EXPECT_EQ(x.labeled, y.labeled);
    EXPECT_EQ(x.unlabeled, y.unlabeled);
  }
}

TEST(Sampler, EmptyLabeledPoolThrows) {
  EXPECT_THROW(MinibatchSampler(0, 4, 1), DatasetError);
  MinibatchSampler s(2, 0, 1);
  EXPECT_TRUE(s.next(2).unlabeled.empty());
  EXPECT_THROW(s.next(0), InvalidArgument);
  DatasetManifest empty;
  EXPECT_THROW(sample_minibatch_pair(empty, 2, s), DatasetError);
}

TEST(Synthetic, RenderIsDeterministicAndMasksAreValid) {
  SynthConfig cfg;
  const auto [img, mask] = render_synthetic_sample(cfg, 3);
  const auto [img2, mask2] = render_synthetic_sample(cfg, 3);
  EXPECT_EQ(img.pixels, img2.pixels);
  EXPECT_EQ(mask.labels, mask2.labels);
  EXPECT_NO_THROW(validate_pair(img, mask, cfg.num_classes));
  const auto [other, other_mask] = render_synthetic_sample(cfg, 3, true);
  EXPECT_NE(img.pixels, other.pixels);
}

TEST(Synthetic, DefectFrequenciesAreImbalanced) {
  SynthConfig cfg;
  std::map<int, long> counts;
  for (int i = 0; i < 200; ++i) {
    const auto sample = render_synthetic_sample(cfg, i);
    for (auto v : sample.second.labels) ++counts[v];
  }
  ASSERT_EQ(counts.size(), 4u);
  long most = 0, least = std::numeric_limits<long>::max();
  for (int c = 1; c <= 3; ++c) {
    most = std::max(most, counts[c]);
    least = std::min(least, counts[c]);
  }
  EXPECT_GE(most, 10 * least);
  EXPECT_GT(counts[0], most);
}

TEST(Synthetic, CorpusOnDiskMatchesRender) {
  TempDir dir;
  SynthConfig cfg;
  cfg.count = 6;
  cfg.test_count = 2;
  const SynthCorpus corpus = generate_synthetic_corpus(cfg, dir.path());
  const DatasetManifest m = load_manifest(dir / "train.tsv");
  EXPECT_EQ(m.num_labeled(), 6u);
  EXPECT_EQ(load_manifest(dir / "test.tsv").num_labeled(), 2u);
  EXPECT_EQ(m.class_names, corpus.catalog.names());
  const InMemoryDataset ds = load_dataset(m, corpus.catalog, 0);
  const auto [img, mask] = render_synthetic_sample(cfg, 4);
  EXPECT_EQ(ds.labeled_images[4].pixels, img.pixels);
  EXPECT_EQ(ds.labeled_masks[4].labels, mask.labels);
  SynthConfig bad = cfg;
  bad.height = 16;
  EXPECT_THROW(generate_synthetic_corpus(bad, dir.path()), InvalidArgument);
}

}  // namespace
}  // namespace pvseg
