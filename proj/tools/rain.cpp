// rain: streaming diffusion toolkit front end.
//
// Flags override values from --config; --set section.key=value reaches any key.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "rain/checkpoint.hpp"
#include "rain/config.hpp"
#include "rain/distill.hpp"
#include "rain/io.hpp"
#include "rain/landmark_io.hpp"
#include "rain/metrics.hpp"
#include "rain/train.hpp"

namespace {

using rain::RunConfig;
using json = nlohmann::ordered_json;

struct Override {
  std::string dotted, value, flag;
};

class Overrides {
 public:
  // A flag that writes one config key. Strings are quoted into TOML syntax.
  void flag(CLI::App* app, const std::string& name, std::string dotted, const std::string& help, bool quoted = false) {
    app->add_option_function<std::string>(
        name,
        [this, dotted, name, quoted](const std::string& v) {
          items_.push_back({dotted, quoted ? rain::toml_quote(v) : v, name});
        },
        help);
  }

  void set_flag(CLI::App* app) {
    app->add_option_function<std::vector<std::string>>(
           "--set",
           [this](const std::vector<std::string>& kvs) {
             for (const std::string& kv : kvs) {
               const auto eq = kv.find('=');
               if (eq == std::string::npos || eq == 0)
                 throw rain::ConfigError("flag --set: expected section.key=value, got '" + kv + "'");
               items_.push_back({kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv.substr(0, eq)});
             }
           },
           "Override any key with a TOML value, e.g. --set oracle.rho=0.9")
        ->type_name("KEY=VALUE");
  }

  void apply(rain::TomlDoc& doc) const {
    for (const Override& o : items_) doc.set(o.dotted, o.value, o.flag);
  }

 private:
  std::vector<Override> items_;
};

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  Overrides overrides;
};

RunConfig resolve(const Command& cmd) {
  rain::TomlDoc doc = cmd.config_path.empty() ? rain::TomlDoc::parse("", "<defaults>") : rain::TomlDoc::load(cmd.config_path);
  cmd.overrides.apply(doc);
  return rain::read_run_config(doc);
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  if (path.empty()) throw rain::ConfigError("output path is empty");
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) throw rain::Error("cannot open " + path + " for writing");
  return os;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream os = open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw rain::Error("write failed: " + path);
}

bool is_csv(const std::string& path) { return std::filesystem::path(path).extension() == ".csv"; }

// One JSON line naming the resolved config; every artifact starts with it.
std::string config_line(const RunConfig& c) { return json{{"config", rain::to_json(c)}}.dump(); }

std::shared_ptr<rain::Denoiser> make_denoiser(const RunConfig& c, const std::string& kind, Eigen::Index& d) {
  if (kind == "oracle") {
    d = c.model.d;
    return std::make_shared<rain::GaussianOracle>(c.prior(c.schedule.K), c.noise_schedule());
  }
  if (kind != "toynet") throw rain::ConfigError("unknown denoiser '" + kind + "' (expected oracle or toynet)");
  if (c.model.checkpoint.empty()) throw rain::ConfigError("denoiser toynet needs model.checkpoint");
  rain::Checkpoint ck = rain::load_checkpoint(c.model.checkpoint);
  if (ck.params.d() != c.model.d)
    throw rain::ConfigError(c.model.checkpoint + ": checkpoint has d=" + std::to_string(ck.params.d()) +
                            " but model.d=" + std::to_string(c.model.d));
  d = ck.params.d();
  auto net = std::make_shared<rain::ToyNetDenoiser>(std::move(ck.params), c.noise_schedule(), ck.info.mask);
  if (ck.info.kind == "consistency") return std::make_shared<rain::ConsistencyModel>(net);
  return net;
}

int cmd_stream(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  Eigen::Index d = 0;
  auto den = make_denoiser(c, c.stream.denoiser, d);
  const rain::StreamResult res =
      rain::run_stream(c.schedule, *den, d, rain::no_cond(), c.stream.frames, c.seed, {.sampler = c.stream.sampler});

  if (is_csv(c.stream.out)) {
    std::ofstream os = open_out(c.stream.out);
    os << "# config: " << rain::to_json(c).dump() << '\n';
    rain::write_frames_csv(os, res.frames);
    if (!os) throw rain::Error("write failed: " + c.stream.out);
  } else {
    rain::FrameFileWriter w(c.stream.out, static_cast<std::uint32_t>(d));
    for (const rain::Frame& f : res.frames) w.write(f);
    w.close();
    write_json_file(c.stream.out + ".json",
                    json{{"config", rain::to_json(c)}, {"frames", res.frames.size()}, {"d", d}, {"dtype", "float32-le"}});
  }
  if (!c.stream.metrics.empty()) {
    std::ofstream os = open_out(c.stream.metrics);
    os << config_line(c) << '\n';
    for (const rain::StepRecord& r : res.records) rain::write_step_ndjson(os, r);
  }
  std::cout << "stream: " << res.frames.size() << " frames, " << res.iterations << " steps, " << res.denoiser_calls
            << " denoiser calls (" << c.stream.denoiser << ", " << rain::to_string(c.stream.sampler) << ") -> "
            << c.stream.out << '\n';
  return 0;
}

int cmd_train(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  const rain::NoiseSchedule sched = c.noise_schedule();
  const rain::GaussianPrior prior = c.prior(c.schedule.K);
  const auto data = rain::gaussian_sequences(prior, c.schedule.K, c.model.c);
  rain::ToyNetParams params;
  long start = 0;
  if (c.model.checkpoint.empty()) {
    params = rain::init_params(c.model.d, c.model.c, c.model.h, c.seed);
  } else {
    rain::Checkpoint ck = rain::load_checkpoint(c.model.checkpoint);
    params = std::move(ck.params);
    start = ck.info.step;
  }

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!c.train.log.empty()) {
    log_file = open_out(c.train.log);
    log_file << config_line(c) << '\n';
    log = &log_file;
  }
  rain::TrainConfig tc{.batch = c.train.batch,
                       .opt = {.lr = c.train.lr, .weight_decay = c.train.weight_decay},
                       .seed = c.seed};
  tc.steps = c.train.pretrain_steps;
  tc.mode = rain::NoiseMode::uniform;
  params = rain::train_temporal_adaptive(std::move(params), data, c.schedule, sched, c.model.mask, tc, log);
  tc.steps = c.train.steps;
  tc.mode = rain::NoiseMode::staggered;
  params = rain::train_temporal_adaptive(std::move(params), data, c.schedule, sched, c.model.mask, tc, log);

  const long total = start + c.train.pretrain_steps + c.train.steps;
  rain::save_checkpoint(c.train.out, params, {c.seed, total, c.model.mask, "toynet"});
  const rain::ValidationReport v = rain::validate_against_oracle(
      rain::round_to_float(params), c.model.mask, prior, c.schedule, sched, rain::NoiseMode::staggered, 400, c.seed);
  if (log) *log << json{{"validation", {{"model_v_mse", v.model}, {"oracle_v_mse", v.oracle}}}}.dump() << '\n';
  std::cout << "train: " << c.train.pretrain_steps << " uniform + " << c.train.steps << " staggered steps ("
            << rain::to_string(c.model.mask) << " mask), held-out v-MSE " << v.model << " vs oracle floor " << v.oracle
            << " -> " << c.train.out << '\n';
  return 0;
}

int cmd_distill(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  const rain::NoiseSchedule sched = c.noise_schedule();
  Eigen::Index d = 0;
  auto teacher = make_denoiser(c, c.distill.teacher, d);

  rain::ToyNetParams init;
  rain::AttentionMaskMode mask = c.model.mask;
  if (c.model.checkpoint.empty()) {
    init = rain::init_params(c.model.d, c.model.c, c.model.h, c.seed);
  } else {
    rain::Checkpoint ck = rain::load_checkpoint(c.model.checkpoint);
    init = std::move(ck.params);
    mask = ck.info.mask;
  }
  if (init.d() != d) throw rain::ConfigError("student d=" + std::to_string(init.d()) + " differs from teacher d=" + std::to_string(d));

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!c.distill.log.empty()) {
    log_file = open_out(c.distill.log);
    log_file << config_line(c) << '\n';
    log = &log_file;
  }
  rain::DistillConfig dc = c.distill.cfg;
  dc.seed = c.seed;
  const auto data = rain::gaussian_sequences(c.prior(c.schedule.K), c.schedule.K, init.c());
  const rain::ToyNetParams theta = rain::distill(*teacher, rain::ToyStudent{sched, mask, 1.0}, std::move(init), data,
                                                 c.schedule, dc, c.distill.steps, log);
  rain::save_checkpoint(c.distill.out, theta, {c.seed, c.distill.steps, mask, "consistency"});
  std::cout << "distill: " << c.distill.steps << " steps against the " << c.distill.teacher << " teacher (omega "
            << dc.omega << ", " << dc.solver_steps << "-step solver) -> " << c.distill.out << '\n';
  return 0;
}

int cmd_landmarks(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  const RunConfig::Landmarks& l = c.landmarks;
  if (l.input.empty()) throw rain::ConfigError("landmarks.input is required");
  const rain::LandmarkSet src = rain::read_landmarks(l.input);
  const rain::MergeTable table = l.table.empty() ? rain::default_merge_table() : rain::read_merge_table(l.table);
  const bool identity = l.params.empty() || l.params == "identity";
  const rain::RegionTransformParams params = identity ? rain::RegionTransformParams{} : rain::read_region_params(l.params);
  const rain::LandmarkSet out = rain::retarget(src, table, params);

  std::ostringstream body;
  rain::write_landmarks(body, out);
  json j = json::parse(body.str());
  j["config"] = rain::to_json(c);
  write_json_file(l.out, j);
  std::cout << "landmarks: " << src.points.size() << " -> " << out.points.size() << " points ("
            << (identity ? std::string("identity") : l.params) << ")";
  for (const auto& [name, a] : rain::apertures(out)) std::cout << ", " << name << " aperture " << a;
  std::cout << " -> " << l.out << '\n';
  return 0;
}

long long nanos(rain::Clock::duration d) { return std::chrono::duration_cast<std::chrono::nanoseconds>(d).count(); }

int cmd_bench(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  Eigen::Index d = 0;
  auto den = make_denoiser(c, c.stream.denoiser, d);
  const rain::BenchReport r = rain::bench_pipeline(c.schedule, *den, d, c.stream.frames, c.seed, c.stream.sampler);
  if (!c.bench.out.empty())
    write_json_file(c.bench.out, json{{"config", rain::to_json(c)},
                                      {"first_frame_latency_iters", r.first_frame_latency_iters},
                                      {"first_frame_latency_wall_ns", nanos(r.first_frame_latency_wall)},
                                      {"throughput_frames_per_iter", r.throughput_frames_per_iter},
                                      {"engine_overhead_per_iter_ns", nanos(r.engine_overhead_per_iter)},
                                      {"denoiser_time_per_iter_ns", nanos(r.denoiser_time_per_iter)},
                                      {"steps", r.series.size()}});
  if (!c.bench.series.empty()) {
    std::ofstream os = open_out(c.bench.series);
    os << "# config: " << rain::to_json(c).dump() << '\n'
       << "iteration,pile_len,popped,t0,step_wall_nanos,denoiser_nanos\n";
    for (const rain::StepRecord& s : r.series)
      os << s.iteration << ',' << s.pile_len << ',' << s.popped << ',' << s.t0 << ',' << s.step_wall_nanos << ','
         << s.denoiser_nanos << '\n';
  }
  std::cout << "bench: first frame after " << r.first_frame_latency_iters << " denoiser calls, "
            << r.throughput_frames_per_iter << " frames/call, engine overhead "
            << static_cast<double>(nanos(r.engine_overhead_per_iter)) / 1e3 << " us/step\n";
  return 0;
}

int cmd_compare(const Command& cmd) {
  const RunConfig c = resolve(cmd);
  const std::uint64_t L = c.stream.frames;
  const std::vector<double> mse = rain::compare_streaming_offline(
      c.schedule, c.prior(static_cast<Eigen::Index>(L)), c.noise_schedule(), c.seed, L, c.stream.sampler);
  double mean = 0, worst = 0;
  for (double m : mse) {
    mean += m / static_cast<double>(mse.size());
    worst = std::max(worst, m);
  }
  const double ratio = mean / c.oracle.variance;
  if (!c.compare.out.empty())
    write_json_file(c.compare.out, json{{"config", rain::to_json(c)},
                                        {"frames", L},
                                        {"mean_mse", mean},
                                        {"max_mse", worst},
                                        {"prior_variance", c.oracle.variance},
                                        {"mean_mse_over_variance", ratio}});
  if (!c.compare.series.empty()) {
    std::ofstream os = open_out(c.compare.series);
    os << "# config: " << rain::to_json(c).dump() << '\n' << "index,mse\n";
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < mse.size(); ++i) os << i << ',' << mse[i] << '\n';
  }
  std::cout << "compare: streamed vs offline over " << L << " frames, mean MSE " << mean << " (" << 100 * ratio
            << "% of prior variance), worst frame " << worst << '\n';
  return 0;
}

void schedule_flags(Command& cmd) {
  cmd.overrides.flag(cmd.app, "--K", "schedule.K", "Frames in the pile");
  cmd.overrides.flag(cmd.app, "--G", "schedule.G", "Noise-level groups");
  cmd.overrides.flag(cmd.app, "--N", "schedule.N", "Denoiser calls per level");
  cmd.overrides.flag(cmd.app, "--T", "schedule.T", "Diffusion timesteps");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming video diffusion on toy latents"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::map<std::string, Command> cmds;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    Command& cmd = cmds[name];
    cmd.app = app.add_subcommand(name, help);
    cmd.app->add_option("--config", cmd.config_path, "TOML config file (defaults apply when omitted)")
        ->check(CLI::ExistingFile);
    cmd.overrides.flag(cmd.app, "--seed", "seed", "Root seed");
    cmd.overrides.set_flag(cmd.app);
    return cmd;
  };

  Command& stream = add("stream", "Stream frames through the pipeline");
  schedule_flags(stream);
  stream.overrides.flag(stream.app, "--frames", "stream.frames", "Number of frames L");
  stream.overrides.flag(stream.app, "--denoiser", "stream.denoiser", "oracle or toynet", true);
  stream.overrides.flag(stream.app, "--sampler", "stream.sampler", "consistency or ddim", true);
  stream.overrides.flag(stream.app, "--checkpoint", "model.checkpoint", "ToyNet checkpoint", true);
  stream.overrides.flag(stream.app, "--out", "stream.out", "Frame file (.csv for text, binary otherwise)", true);
  stream.overrides.flag(stream.app, "--metrics", "stream.metrics", "NDJSON step records", true);

  Command& train = add("train", "Train the ToyNet: uniform levels, then staggered");
  schedule_flags(train);
  train.overrides.flag(train.app, "--pretrain-steps", "train.pretrain_steps", "Uniform-level steps");
  train.overrides.flag(train.app, "--steps", "train.steps", "Staggered-level steps");
  train.overrides.flag(train.app, "--lr", "train.lr", "Learning rate");
  train.overrides.flag(train.app, "--mask", "model.mask", "full or causal", true);
  train.overrides.flag(train.app, "--checkpoint", "model.checkpoint", "Resume from this checkpoint", true);
  train.overrides.flag(train.app, "--out", "train.out", "Checkpoint to write", true);
  train.overrides.flag(train.app, "--log", "train.log", "NDJSON loss log", true);

  Command& distill = add("distill", "Consistency-distill a student from a teacher");
  schedule_flags(distill);
  distill.overrides.flag(distill.app, "--steps", "distill.steps", "Distillation steps");
  distill.overrides.flag(distill.app, "--teacher", "distill.teacher", "oracle or toynet", true);
  distill.overrides.flag(distill.app, "--omega", "distill.omega", "Guidance strength in [2.0, 3.5]");
  distill.overrides.flag(distill.app, "--checkpoint", "model.checkpoint", "Student init (and toynet teacher)", true);
  distill.overrides.flag(distill.app, "--out", "distill.out", "Checkpoint to write", true);
  distill.overrides.flag(distill.app, "--log", "distill.log", "NDJSON loss log", true);

  Command& lm = add("landmarks", "Retarget human-68 landmarks to anime-26");
  lm.overrides.flag(lm.app, "--input", "landmarks.input", "Human-68 landmark JSON", true);
  lm.overrides.flag(lm.app, "--table", "landmarks.table", "Merge table JSON", true);
  lm.overrides.flag(lm.app, "--params", "landmarks.params", "Region transform TOML ('identity' for none)", true);
  lm.overrides.flag(lm.app, "--out", "landmarks.out", "Anime-26 landmark JSON", true);

  Command& bench = add("bench", "Measure latency, throughput and engine overhead");
  schedule_flags(bench);
  bench.overrides.flag(bench.app, "--frames", "stream.frames", "Number of frames L");
  bench.overrides.flag(bench.app, "--denoiser", "stream.denoiser", "oracle or toynet", true);
  bench.overrides.flag(bench.app, "--checkpoint", "model.checkpoint", "ToyNet checkpoint", true);
  bench.overrides.flag(bench.app, "--out", "bench.out", "Report JSON", true);
  bench.overrides.flag(bench.app, "--series", "bench.series", "Per-step CSV", true);

  Command& compare = add("compare", "Compare streamed and offline oracle outputs");
  schedule_flags(compare);
  compare.overrides.flag(compare.app, "--frames", "stream.frames", "Number of frames L");
  compare.overrides.flag(compare.app, "--sampler", "stream.sampler", "consistency or ddim", true);
  compare.overrides.flag(compare.app, "--out", "compare.out", "Report JSON", true);
  compare.overrides.flag(compare.app, "--series", "compare.series", "Per-frame CSV", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const rain::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    for (auto& [name, cmd] : cmds) {
      if (!cmd.app->parsed()) continue;
      if (name == "stream") return cmd_stream(cmd);
      if (name == "train") return cmd_train(cmd);
      if (name == "distill") return cmd_distill(cmd);
      if (name == "landmarks") return cmd_landmarks(cmd);
      if (name == "bench") return cmd_bench(cmd);
      if (name == "compare") return cmd_compare(cmd);
    }
  } catch (const rain::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
