#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "goalnca/store.hpp"

using namespace goalnca;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "goalnca_store_test";
  fs::create_directories(dir);
  return dir / name;
}

Checkpoint sample_checkpoint(int n_hidden, bool with_optimizer) {
  TrainConfig c;
  c.task = Task::locomotion;
  c.grid_size = 10;
  c.n_hidden = n_hidden;
  c.batch_size = 2;
  c.pool_size = 2;
  c.min_steps = c.max_steps = 2;
  c.segments = 1;
  c.fire_rate = 1.0;
  c.encoder = EncoderKind::embedding;
  c.seed = 3;
  RgbaImage t(4, 10, 10);
  t.at(3, 5, 5) = 1.0f;
  Trainer tr(c, {t});
  tr.step();
  return make_checkpoint(tr, with_optimizer);
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

checkpoint_error::kind load_error_kind(const fs::path& p) {
  try {
    load_checkpoint(p);
  } catch (const checkpoint_error& e) {
    return e.which();
  }
  ADD_FAILURE() << "load succeeded";
  return checkpoint_error::kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool opt : {false, true}) {
    const auto ck = sample_checkpoint(4, opt);
    const auto path = temp_file("rt.gnca");
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back, ck);
    EXPECT_EQ(back.meta.goal_names.size(), 5u);
    EXPECT_EQ(back.optimizer.has_value(), opt);
    save_checkpoint(temp_file("rt2.gnca"), back);
    EXPECT_EQ(read_bytes(path), read_bytes(temp_file("rt2.gnca")));
  }
}

TEST(Checkpoint, PreservesNonFiniteAndSignedZero) {
  auto ck = sample_checkpoint(4, false);
  ck.nca.w1[0] = -0.0f;
  ck.nca.w1[1] = std::numeric_limits<float>::denorm_min();
  ck.nca.w1[2] = std::numeric_limits<float>::quiet_NaN();
  const auto path = temp_file("nan.gnca");
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(std::signbit(back.nca.w1[0]));
  EXPECT_EQ(back.nca.w1[1], ck.nca.w1[1]);
  EXPECT_TRUE(std::isnan(back.nca.w1[2]));
}

TEST(Checkpoint, TruncatedMidBlob) {
  const auto path = temp_file("trunc.gnca");
  save_checkpoint(path, sample_checkpoint(4, false));
  auto bytes = read_bytes(path);
  bytes.resize(bytes.size() - 37);
  write_bytes(path, bytes);
  EXPECT_EQ(load_error_kind(path), checkpoint_error::kind::truncated);
  bytes.resize(20);
  write_bytes(path, bytes);
  EXPECT_EQ(load_error_kind(path), checkpoint_error::kind::truncated);
}

TEST(Checkpoint, BadMagicAndVersion) {
  const auto path = temp_file("magic.gnca");
  save_checkpoint(path, sample_checkpoint(4, false));
  auto bytes = read_bytes(path);
  auto bad = bytes;
  bad[0] = 'X';
  write_bytes(path, bad);
  EXPECT_EQ(load_error_kind(path), checkpoint_error::kind::bad_magic);
  bad = bytes;
  bad[4] = 9;
  write_bytes(path, bad);
  EXPECT_EQ(load_error_kind(path), checkpoint_error::kind::version_mismatch);
}

TEST(Checkpoint, MissingFileNamesPath) {
  try {
    load_checkpoint("/nonexistent/model.gnca");
    FAIL();
  } catch (const checkpoint_error& e) {
    EXPECT_EQ(e.which(), checkpoint_error::kind::io);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/model.gnca"), std::string::npos);
  }
}

TEST(Checkpoint, ChannelMismatchNamesBothValues) {
  const auto ck = sample_checkpoint(16, false);
  ASSERT_EQ(ck.meta.channels, 20);
  try {
    expect_channels(ck, 36);
    FAIL();
  } catch (const checkpoint_error& e) {
    EXPECT_EQ(e.which(), checkpoint_error::kind::shape_mismatch);
    const std::string m = e.what();
    EXPECT_NE(m.find("20"), std::string::npos);
    EXPECT_NE(m.find("36"), std::string::npos);
  }
  EXPECT_NO_THROW(expect_channels(ck, 20));
}

TEST(Presets, Values) {
  const auto m = preset("morphing");
  EXPECT_EQ(m.train.pool_size, 1024);
  EXPECT_EQ(m.train.batch_size, 8);
  EXPECT_EQ(m.train.n_hidden, 16);
  EXPECT_EQ(m.train.fire_rate, 0.5);
  EXPECT_EQ(m.train.segments, 2);
  EXPECT_EQ(m.targets.size(), 10u);
  const auto l = preset("locomotion");
  EXPECT_EQ(l.train.batch_size, 24);
  EXPECT_EQ(l.train.pool_size, 256);
  EXPECT_EQ(l.train.n_hidden, 32);
  EXPECT_EQ(l.train.fire_rate, 1.0);
  EXPECT_EQ(l.train.segments, 4);
  EXPECT_EQ(l.train.encoder, EncoderKind::embedding);
  EXPECT_EQ(GoalEncoder<float>::zeros(l.train.encoder, 5, l.train.n_hidden).parameter_count(), 160u);
  EXPECT_EQ(preset("morphing-desk").train.channels(), 12);
  EXPECT_EQ(preset("locomotion-desk").train.channels(), 16);
  for (const auto& n : preset_names()) EXPECT_NO_THROW(preset(n).train.validate()) << n;
}

TEST(Presets, UnknownNameListsValidOnes) {
  try {
    preset("bogus");
    FAIL();
  } catch (const config_error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("bogus"), std::string::npos);
    EXPECT_NE(m.find("morphing"), std::string::npos);
    EXPECT_NE(m.find("locomotion"), std::string::npos);
  }
}

TEST(Config, ParsesPresetAndOverrides) {
  const auto rc = parse_config("# desk run\npreset = locomotion\nbatch_size = 4\n\nfire_rate = 0.75  # lower\n"
                               "targets = lizard,eye\n");
  EXPECT_EQ(rc.train.task, Task::locomotion);
  EXPECT_EQ(rc.train.batch_size, 4);
  EXPECT_EQ(rc.train.pool_size, 256);
  EXPECT_EQ(rc.train.fire_rate, 0.75);
  EXPECT_EQ(rc.targets, (std::vector<std::string>{"lizard", "eye"}));
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    parse_config("batch_size = 4\nwidth = 3\n", "run.cfg");
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(parse_config("batch_size = four\n"), config_error);
  EXPECT_THROW(parse_config("fire_rate = 2\n"), config_error);
  EXPECT_THROW(parse_config("just words\n"), config_error);
}

TEST(Config, FormatRoundTrips) {
  for (const auto& n : preset_names()) {
    auto rc = preset(n);
    rc.train.lr = 0.1 + 0.2;  // not exactly representable in short decimal
    rc.out_dir = "runs/x";
    EXPECT_EQ(parse_config(format_config(rc)), rc) << n;
  }
}

TEST(Config, PresetAcceptsFilePath) {
  const auto path = temp_file("run.cfg");
  std::ofstream(path) << "preset = morphing-desk\ntotal_iterations = 7\n";
  EXPECT_EQ(preset(path.string()).train.total_iterations, 7);
}
