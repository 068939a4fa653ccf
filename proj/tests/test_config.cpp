#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rain/checkpoint.hpp"
#include "rain/config.hpp"

using namespace rain;

namespace {

RunConfig parse(std::string_view text) {
  TomlDoc doc = TomlDoc::parse(text, "run.toml");
  return read_run_config(doc);
}

std::string error_of(std::string_view text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / ("rain_cfg_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const RunConfig c = parse("");
  EXPECT_EQ(c.schedule, ScheduleConfig{});
  EXPECT_EQ(c.distill.cfg.omega, 2.0);
  EXPECT_EQ(c.distill.cfg.huber_c, 0.001);
  EXPECT_EQ(c.distill.cfg.solver_steps, 100);
  EXPECT_EQ(c.distill.steps, 1200);
  EXPECT_EQ(c.model.h, 32);
  EXPECT_EQ(c.model.d, 8);
}

TEST(Config, ReadsEverySection) {
  const RunConfig c = parse(R"(seed = 9
[schedule]
K = 8
G = 2
N = 5
[model]
mask = "causal"
[stream]
frames = 40
sampler = "ddim"
[distill]
omega = 3.5
ema_rate = 0.9
)");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.schedule, (ScheduleConfig{8, 2, 5, 1000}));
  EXPECT_EQ(c.model.mask, AttentionMaskMode::causal);
  EXPECT_EQ(c.stream.frames, 40u);
  EXPECT_EQ(c.stream.sampler, Sampler::ddim);
  EXPECT_EQ(c.distill.cfg.omega, 3.5);
  EXPECT_EQ(c.distill.cfg.ema_rate, 0.9);
}

TEST(Config, ErrorsAreLinePrecise) {
  EXPECT_EQ(error_of("seed = 1\n[schedule]\nK = 16\nQ = 2\n"), "run.toml:4: unknown key 'schedule.Q'");
  EXPECT_EQ(error_of("\n[sched]\nK = 1\n"), "run.toml:2: unknown key 'sched'");
  EXPECT_EQ(error_of("[schedule]\nK = 16\nG = 3\n"), "run.toml:3: schedule.G=3 must divide K=16");
  EXPECT_EQ(error_of("[schedule]\nN = 3\n"), "run.toml:2: G*N=12 must divide T=1000");
  EXPECT_EQ(error_of("[stream]\n\nframes = 66\n"),
            "run.toml:3: stream.frames=66 is not a multiple of the group size g=K/G=4");
  EXPECT_EQ(error_of("[distill]\nomega = 1.0\n"), "run.toml:2: distill.omega must lie in [2.0, 3.5]");
  EXPECT_EQ(error_of("[model]\nmask = \"diagonal\"\n"), "run.toml:2: mask must be 'full' or 'causal', got 'diagonal'");
  EXPECT_EQ(error_of("[schedule]\nK = \"16\"\n"), "run.toml:2: 'schedule.K' must be an integer");
  EXPECT_EQ(error_of("[stream]\ndenoiser = \"toynet\"\n"), "run.toml:2: stream.denoiser=toynet needs model.checkpoint");
}

TEST(Config, FlagsOverrideFile) {
  TomlDoc doc = TomlDoc::parse("[schedule]\nK = 8\n[stream]\nframes = 8\n", "run.toml");
  doc.set("schedule.K", "16", "--K");
  doc.set("stream.out", toml_quote("a \"b\".bin"), "--out");
  doc.set("model.mask", toml_quote("causal"), "--mask");
  const RunConfig c = read_run_config(doc);
  EXPECT_EQ(c.schedule.K, 16);
  EXPECT_EQ(c.stream.frames, 8u);
  EXPECT_EQ(c.stream.out, "a \"b\".bin");
  EXPECT_EQ(c.model.mask, AttentionMaskMode::causal);

  TomlDoc bad = TomlDoc::parse("", "run.toml");
  bad.set("schedule.G", "3", "--G");
  try {
    read_run_config(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()), "flag --G: schedule.G=3 must divide K=16");
  }
  EXPECT_THROW(bad.set("schedule.K", "1 2", "--K"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(RAIN_CONFIG_DIR)) {
    TomlDoc doc = TomlDoc::load(entry.path().string());
    EXPECT_NO_THROW(read_run_config(doc)) << entry.path();
  }
}

TEST(Config, JsonEchoRoundTripsKeyFields) {
  const RunConfig c = parse("seed = 5\n[schedule]\nN = 2\n");
  const auto j = to_json(c);
  EXPECT_EQ(j["seed"], 5);
  EXPECT_EQ(j["schedule"]["N"], 2);
  EXPECT_EQ(j["distill"]["omega"], 2.0);
  EXPECT_EQ(j["model"]["mask"], "full");
}

TEST(Checkpoint, RoundTripIsFloatExact) {
  const auto dir = temp_dir();
  const std::string path = (dir / "net.bin").string();
  const ToyNetParams p = init_params(8, 2, 16, 3);
  save_checkpoint(path, p, {.seed = 3, .step = 77, .mask = AttentionMaskMode::causal});
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.params, round_to_float(p));
  EXPECT_EQ(ck.info.seed, 3u);
  EXPECT_EQ(ck.info.step, 77);
  EXPECT_EQ(ck.info.mask, AttentionMaskMode::causal);
  EXPECT_EQ(std::filesystem::file_size(path), static_cast<std::uintmax_t>(p.size() * 4));

  // A float-representable parameter set survives bit-exactly, and so do the bytes.
  const std::string again = (dir / "again.bin").string();
  save_checkpoint(again, ck.params, ck.info);
  EXPECT_EQ(load_checkpoint(again).params, ck.params);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b)));

  const auto man = nlohmann::json::parse(std::ifstream(manifest_path(path)));
  EXPECT_EQ(man["blocks"].size(), static_cast<std::size_t>(Block::count));
  EXPECT_EQ(man["blocks"][0]["name"], "W_in");
  EXPECT_EQ(man["blocks"][0]["rows"], 16);
  EXPECT_EQ(man["blocks"][0]["cols"], 8);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto dir = temp_dir();
  const std::string path = (dir / "net.bin").string();
  save_checkpoint(path, init_params(4, 0, 8, 1), {});
  std::filesystem::resize_file(path, 12);
  EXPECT_THROW(load_checkpoint(path), ConfigError);
  EXPECT_THROW(load_checkpoint((dir / "missing.bin").string()), ConfigError);
  std::filesystem::remove_all(dir);
}
