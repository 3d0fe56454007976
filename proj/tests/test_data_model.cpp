#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace dora;

namespace {

LoadResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "mem");
}

const char* kThreeRecords =
    R"({"id":"a","image_ref":"a.ppm","caption":"ভালো meme","task1":"HT","task2":"TI","split":null})"
    "\n"
    R"({"id":"b","image_ref":"b.ppm","caption":"hello world","task1":"NHT","task2":null})"
    "\n"
    R"({"id":"c","image_ref":"c.ppm","caption":" x ","task1":"HT","split":"train"})"
    "\n";

}  // namespace

TEST(LoadManifest, ThreeValidRecords) {
  auto r = parse(kThreeRecords);
  EXPECT_EQ(r.manifest.size(), 3u);
  EXPECT_TRUE(r.rejects.empty());
  EXPECT_EQ(r.manifest.samples[0].labels.task2, Task2Label::TI);
  EXPECT_EQ(r.manifest.samples[2].split, Split::train);
  EXPECT_EQ(r.manifest.samples[0].caption, "ভালো meme");
}

TEST(LoadManifest, TargetOnNonHatefulIsRejected) {
  auto r = parse(R"({"id":"a","image_ref":"a","caption":"x","task1":"NHT","task2":"TI"})"
                 "\n");
  EXPECT_EQ(r.manifest.size(), 0u);
  ASSERT_EQ(r.rejects.size(), 1u);
  EXPECT_EQ(r.rejects[0].line, 1u);
  EXPECT_EQ(r.rejects[0].field, "task2");
  EXPECT_NE(r.rejects[0].error.find("only defined when task1 = HT"), std::string::npos);
}

TEST(LoadManifest, ReportsLineAndFieldForBadRecords) {
  auto r = parse(std::string(kThreeRecords) +
                 R"({"id":"d","image_ref":"d","caption":"   ","task1":"HT"})" "\n"
                 R"({"id":"e","image_ref":"e","caption":"ok","task1":"XX"})" "\n"
                 R"({"id":"a","image_ref":"a","caption":"dup","task1":"HT"})" "\n"
                 R"({"id":"f","caption":"no image","task1":"HT"})" "\n"
                 "{not json\n");
  EXPECT_EQ(r.manifest.size(), 3u);
  ASSERT_EQ(r.rejects.size(), 5u);
  EXPECT_EQ(r.rejects[0].line, 4u);
  EXPECT_EQ(r.rejects[0].field, "caption");
  EXPECT_EQ(r.rejects[1].field, "task1");
  EXPECT_EQ(r.rejects[2].field, "id");
  EXPECT_NE(r.rejects[2].error.find("duplicate"), std::string::npos);
  EXPECT_EQ(r.rejects[3].field, "image_ref");
  EXPECT_EQ(r.rejects[4].line, 8u);
  EXPECT_NE(r.rejects[4].error.find("malformed JSON"), std::string::npos);
}

TEST(LoadManifest, MissingFileThrows) {
  EXPECT_THROW(load_manifest("/nonexistent/manifest.jsonl"), InputError);
}

TEST(LoadManifest, RejectReportCarriesRecordAndError) {
  auto r = parse(R"({"id":"a","image_ref":"a","caption":"x","task1":"NHT","task2":"TO"})" "\n");
  std::ostringstream out;
  write_rejects(out, r.rejects);
  auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["id"], "a");
  EXPECT_EQ(j["line"], 1);
  EXPECT_NE(j["error"].get<std::string>().find("task2"), std::string::npos);
}

TEST(LoadManifest, SerializationRoundTripsBitExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    DatasetManifest m;
    m.name = "trial" + std::to_string(trial);
    m.language_tag = "bn-en";
    const int n = 1 + static_cast<int>(index_below(rng, 30));
    for (int i = 0; i < n; ++i) {
      MemeSample s;
      s.id = "id-" + std::to_string(i) + "\"q";
      s.image_ref = "imgs/" + std::to_string(rng());
      s.caption = "ক্যাপশন \t tab \\ slash " + std::to_string(rng()) + " ✓";
      s.labels.task1 = index_below(rng, 2) ? Task1Label::HT : Task1Label::NHT;
      if (s.labels.task1 == Task1Label::HT && index_below(rng, 2))
        s.labels.task2 = static_cast<Task2Label>(index_below(rng, 4));
      s.split = static_cast<Split>(index_below(rng, 4));
      m.samples.push_back(s);
    }
    std::ostringstream first;
    write_manifest(first, m);
    std::istringstream in(first.str());
    auto back = parse_manifest(in, "ignored");
    ASSERT_TRUE(back.rejects.empty());
    EXPECT_EQ(back.manifest.name, m.name);
    EXPECT_EQ(back.manifest.language_tag, m.language_tag);
    EXPECT_EQ(back.manifest.samples, m.samples);
    std::ostringstream second;
    write_manifest(second, back.manifest);
    EXPECT_EQ(first.str(), second.str());
  }
}

TEST(SplitDataset, TenSamplesSplitEightOneOne) {
  DatasetManifest m = synth::manifest_from_counts({{Split::unassigned, Task1Label::NHT, std::nullopt, 10}});
  auto s = split_dataset(m, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.in_split(Split::train).size(), 8u);
  EXPECT_EQ(s.in_split(Split::valid).size(), 1u);
  EXPECT_EQ(s.in_split(Split::test).size(), 1u);
}

TEST(SplitDataset, DeterministicForSeed) {
  DatasetManifest m = synth::manifest_from_counts({{Split::unassigned, Task1Label::HT, Task2Label::TC, 37},
                                                     {Split::unassigned, Task1Label::NHT, std::nullopt, 55}});
  auto a = split_dataset(m, {0.8, 0.1, 0.1}, 99);
  auto b = split_dataset(m, {0.8, 0.1, 0.1}, 99);
  EXPECT_EQ(a.samples, b.samples);
  auto c = split_dataset(m, {0.8, 0.1, 0.1}, 100);
  EXPECT_NE(a.samples, c.samples);
  for (auto sp : {Split::train, Split::valid, Split::test})
    EXPECT_EQ(class_distribution(a, 1, sp), class_distribution(c, 1, sp));
}

TEST(SplitDataset, LargestRemainderOnBenchmarkTotals) {
  // 2624 HT: quotas 2099.2 / 262.4 / 262.4 -> 2099 / 263 / 262
  // 4485 NHT: quotas 3588 / 448.5 / 448.5 -> 3588 / 449 / 448
  DatasetManifest m = synth::manifest_from_counts({{Split::unassigned, Task1Label::HT, Task2Label::TI, 2624},
                                                     {Split::unassigned, Task1Label::NHT, std::nullopt, 4485}});
  auto s = split_dataset(m, {0.8, 0.1, 0.1}, 2024);
  auto train = class_distribution(s, 1, Split::train);
  auto valid = class_distribution(s, 1, Split::valid);
  auto test = class_distribution(s, 1, Split::test);
  EXPECT_EQ(train["HT"], 2099u);
  EXPECT_EQ(valid["HT"], 263u);
  EXPECT_EQ(test["HT"], 262u);
  EXPECT_EQ(train["NHT"], 3588u);
  EXPECT_EQ(valid["NHT"], 449u);
  EXPECT_EQ(test["NHT"], 448u);
}

TEST(SplitDataset, PartitionsEverySample) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int ht = 3 + static_cast<int>(index_below(rng, 40));
    const int nht = 3 + static_cast<int>(index_below(rng, 40));
    auto m = synth::manifest_from_counts({{Split::unassigned, Task1Label::HT, std::nullopt, ht},
                                            {Split::unassigned, Task1Label::NHT, std::nullopt, nht}});
    const double a = 0.1 + 0.6 * unit_real(rng);
    const double b = (1.0 - a) * (0.1 + 0.8 * unit_real(rng));
    auto s = split_dataset(m, {a, b, 1.0 - a - b}, rng());
    std::size_t total = 0;
    for (auto sp : {Split::train, Split::valid, Split::test}) total += s.in_split(sp).size();
    EXPECT_EQ(total, m.size());
    for (const auto& sample : s.samples) EXPECT_NE(sample.split, Split::unassigned);
  }
}

TEST(SplitDataset, Errors) {
  auto m = synth::manifest_from_counts({{Split::unassigned, Task1Label::HT, std::nullopt, 2},
                                          {Split::unassigned, Task1Label::NHT, std::nullopt, 10}});
  EXPECT_THROW(split_dataset(m, {0.8, 0.1, 0.1}, 1), InputError);  // stratum of 2
  auto ok = synth::manifest_from_counts({{Split::unassigned, Task1Label::NHT, std::nullopt, 10}});
  EXPECT_THROW(split_dataset(ok, {0.8, 0.1, 0.2}, 1), InputError);
  EXPECT_THROW(split_dataset(ok, {0.9, 0.1, 0.0}, 1), InputError);
  auto assigned = synth::manifest_from_counts({{Split::train, Task1Label::NHT, std::nullopt, 10}});
  EXPECT_THROW(split_dataset(assigned, {0.8, 0.1, 0.1}, 1), InputError);
}

TEST(ClassDistribution, EmptyManifestAllZero) {
  DatasetManifest m;
  auto d1 = class_distribution(m, 1);
  auto d2 = class_distribution(m, 2);
  EXPECT_EQ(d1.size(), 2u);
  EXPECT_EQ(d2.size(), 4u);
  for (auto& [k, v] : d1) EXPECT_EQ(v, 0u);
  for (auto& [k, v] : d2) EXPECT_EQ(v, 0u);
}

TEST(ClassDistribution, HandCount) {
  auto m = synth::manifest_from_counts({{Split::train, Task1Label::HT, std::nullopt, 2},
                                          {Split::train, Task1Label::NHT, std::nullopt, 1}});
  auto d = class_distribution(m, 1);
  EXPECT_EQ(d["HT"], 2u);
  EXPECT_EQ(d["NHT"], 1u);
  EXPECT_THROW(class_distribution(m, 3), InputError);
}

TEST(ClassDistribution, BenchmarkReplica) {
  auto m = synth::manifest_from_counts(synth::benchmark_split_counts());
  auto all = class_distribution(m, 1);
  EXPECT_EQ(all["HT"], 2624u);
  EXPECT_EQ(all["NHT"], 4485u);
  auto t1 = class_distribution(m, 1, Split::train);
  EXPECT_EQ(t1["HT"], 2117u);
  EXPECT_EQ(t1["NHT"], 3641u);
  auto t2 = class_distribution(m, 2, Split::train);
  EXPECT_EQ(t2["TI"], 1623u);
  EXPECT_EQ(t2["TO"], 160u);
  EXPECT_EQ(t2["TC"], 249u);
  EXPECT_EQ(t2["TS"], 85u);
}

TEST(ClassDistribution, SumsToFilteredCount) {
  auto m = synth::manifest_from_counts(synth::benchmark_split_counts());
  for (auto sp : {Split::train, Split::valid, Split::test}) {
    std::size_t sum = 0;
    for (auto& [k, v] : class_distribution(m, 1, sp)) sum += v;
    EXPECT_EQ(sum, m.in_split(sp).size());
  }
}
