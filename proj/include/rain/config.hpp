#pragma once

#include <sstream>
#include <string>

#include <json.hpp>

#include "rain/diffusion.hpp"
#include "rain/distill.hpp"
#include "rain/schedule.hpp"
#include "rain/stream.hpp"
#include "rain/toml_util.hpp"
#include "rain/toynet.hpp"
#include "rain/train.hpp"

namespace rain {

inline std::string_view to_string(Sampler s) { return s == Sampler::consistency ? "consistency" : "ddim"; }

inline Sampler parse_sampler(std::string_view s) {
  if (s == "consistency") return Sampler::consistency;
  if (s == "ddim") return Sampler::ddim;
  throw ConfigError("unknown sampler '" + std::string(s) + "' (expected consistency or ddim)");
}

/// TOML literal for a string, for building flag overrides.
inline std::string toml_quote(std::string_view s) {
  std::ostringstream os;
  os << toml::value<std::string>(std::string(s));
  return os.str();
}

/// Everything a command needs, resolved from defaults, the config file and
/// flags (in increasing precedence).
struct RunConfig {
  std::uint64_t seed = 0;

  ScheduleConfig schedule{};
  double beta_start = 0.00085;
  double beta_end = 0.012;

  struct Model {
    Eigen::Index d = 8;
    Eigen::Index h = 32;
    Eigen::Index c = 0;
    AttentionMaskMode mask = AttentionMaskMode::full;
    std::string checkpoint;
  } model;

  struct Oracle {
    double rho = 0.95;
    double mean = 0.0;
    double variance = 1.0;
  } oracle;

  struct Stream {
    std::uint64_t frames = 64;
    std::string denoiser = "oracle";
    Sampler sampler = Sampler::consistency;
    std::string out = "frames.bin";
    std::string metrics = "metrics.ndjson";
  } stream;

  struct Train {
    long pretrain_steps = 4000;
    long steps = 4000;
    int batch = 8;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::string out = "toynet.bin";
    std::string log = "train.ndjson";
  } train;

  struct Distill {
    long steps = 1200;
    DistillConfig cfg{};
    std::string teacher = "oracle";
    std::string out = "student.bin";
    std::string log = "distill.ndjson";
  } distill;

  struct Landmarks {
    std::string input;
    std::string table;
    std::string params;
    std::string out = "anime26.json";
  } landmarks;

  struct Report {
    std::string out;
    std::string series;
  } bench{"bench.json", "bench_series.csv"}, compare{"compare.json", "compare_series.csv"};

  NoiseSchedule noise_schedule() const { return build_schedule(schedule.T, beta_start, beta_end); }

  GaussianPrior prior(Eigen::Index frames) const {
    return ar1_prior(frames, model.d, oracle.rho, oracle.variance, oracle.mean);
  }
};

namespace detail {

template <class T>
void read_enum(TomlDoc& doc, const toml::table& t, std::string_view key, const std::string& dotted, T& out,
               T (*parse)(std::string_view)) {
  std::string s;
  if (!doc.read(t, key, dotted, s)) return;
  try {
    out = parse(s);
  } catch (const ConfigError& e) {
    doc.fail(dotted, e.what());
  }
}

}  // namespace detail

/// Reads and validates a configuration. Unknown sections and keys are errors.
inline RunConfig read_run_config(TomlDoc& doc) {
  RunConfig c;
  const toml::table& root = doc.root();
  doc.allow(root, "",
            {"seed", "schedule", "model", "oracle", "stream", "train", "distill", "landmarks", "bench", "compare"});
  doc.read(root, "seed", "seed", c.seed);

  if (const toml::table* t = doc.table(root, "schedule", "schedule")) {
    doc.allow(*t, "schedule", {"K", "G", "N", "T", "beta_start", "beta_end"});
    doc.read(*t, "K", "schedule.K", c.schedule.K);
    doc.read(*t, "G", "schedule.G", c.schedule.G);
    doc.read(*t, "N", "schedule.N", c.schedule.N);
    doc.read(*t, "T", "schedule.T", c.schedule.T);
    doc.read(*t, "beta_start", "schedule.beta_start", c.beta_start);
    doc.read(*t, "beta_end", "schedule.beta_end", c.beta_end);
  }
  if (const toml::table* t = doc.table(root, "model", "model")) {
    doc.allow(*t, "model", {"d", "h", "c", "mask", "checkpoint"});
    doc.read(*t, "d", "model.d", c.model.d);
    doc.read(*t, "h", "model.h", c.model.h);
    doc.read(*t, "c", "model.c", c.model.c);
    detail::read_enum(doc, *t, "mask", "model.mask", c.model.mask, parse_mask_mode);
    doc.read(*t, "checkpoint", "model.checkpoint", c.model.checkpoint);
  }
  if (const toml::table* t = doc.table(root, "oracle", "oracle")) {
    doc.allow(*t, "oracle", {"rho", "mean", "variance"});
    doc.read(*t, "rho", "oracle.rho", c.oracle.rho);
    doc.read(*t, "mean", "oracle.mean", c.oracle.mean);
    doc.read(*t, "variance", "oracle.variance", c.oracle.variance);
  }
  if (const toml::table* t = doc.table(root, "stream", "stream")) {
    doc.allow(*t, "stream", {"frames", "denoiser", "sampler", "out", "metrics"});
    doc.read(*t, "frames", "stream.frames", c.stream.frames);
    doc.read(*t, "denoiser", "stream.denoiser", c.stream.denoiser);
    detail::read_enum(doc, *t, "sampler", "stream.sampler", c.stream.sampler, parse_sampler);
    doc.read(*t, "out", "stream.out", c.stream.out);
    doc.read(*t, "metrics", "stream.metrics", c.stream.metrics);
  }
  if (const toml::table* t = doc.table(root, "train", "train")) {
    doc.allow(*t, "train", {"pretrain_steps", "steps", "batch", "lr", "weight_decay", "out", "log"});
    doc.read(*t, "pretrain_steps", "train.pretrain_steps", c.train.pretrain_steps);
    doc.read(*t, "steps", "train.steps", c.train.steps);
    doc.read(*t, "batch", "train.batch", c.train.batch);
    doc.read(*t, "lr", "train.lr", c.train.lr);
    doc.read(*t, "weight_decay", "train.weight_decay", c.train.weight_decay);
    doc.read(*t, "out", "train.out", c.train.out);
    doc.read(*t, "log", "train.log", c.train.log);
  }
  if (const toml::table* t = doc.table(root, "distill", "distill")) {
    doc.allow(*t, "distill",
              {"steps", "ema_rate", "omega", "huber_c", "solver_steps", "batch", "lr", "staggered_fraction", "teacher",
               "out", "log"});
    DistillConfig& d = c.distill.cfg;
    doc.read(*t, "steps", "distill.steps", c.distill.steps);
    doc.read(*t, "ema_rate", "distill.ema_rate", d.ema_rate);
    doc.read(*t, "omega", "distill.omega", d.omega);
    doc.read(*t, "huber_c", "distill.huber_c", d.huber_c);
    doc.read(*t, "solver_steps", "distill.solver_steps", d.solver_steps);
    doc.read(*t, "batch", "distill.batch", d.batch);
    doc.read(*t, "lr", "distill.lr", d.opt.lr);
    doc.read(*t, "staggered_fraction", "distill.staggered_fraction", d.staggered_fraction);
    doc.read(*t, "teacher", "distill.teacher", c.distill.teacher);
    doc.read(*t, "out", "distill.out", c.distill.out);
    doc.read(*t, "log", "distill.log", c.distill.log);
  }
  if (const toml::table* t = doc.table(root, "landmarks", "landmarks")) {
    doc.allow(*t, "landmarks", {"input", "table", "params", "out"});
    doc.read(*t, "input", "landmarks.input", c.landmarks.input);
    doc.read(*t, "table", "landmarks.table", c.landmarks.table);
    doc.read(*t, "params", "landmarks.params", c.landmarks.params);
    doc.read(*t, "out", "landmarks.out", c.landmarks.out);
  }
  for (auto [name, report] : {std::pair{"bench", &c.bench}, std::pair{"compare", &c.compare}}) {
    if (const toml::table* t = doc.table(root, name, name)) {
      doc.allow(*t, name, {"out", "series"});
      doc.read(*t, "out", std::string(name) + ".out", report->out);
      doc.read(*t, "series", std::string(name) + ".series", report->series);
    }
  }

  // Cross-field checks, reported at the line of the key most likely at fault.
  auto check = [&](bool ok, std::string_view key, const std::string& msg) {
    if (!ok) doc.fail(key, msg);
  };
  const ScheduleConfig& s = c.schedule;
  check(s.K >= 1, "schedule.K", "schedule.K must be >= 1");
  check(s.G >= 1, "schedule.G", "schedule.G must be >= 1");
  check(s.N >= 1, "schedule.N", "schedule.N must be >= 1");
  check(s.T >= 2, "schedule.T", "schedule.T must be >= 2");
  check(s.K % s.G == 0, "schedule.G", "schedule.G=" + std::to_string(s.G) + " must divide K=" + std::to_string(s.K));
  check(s.T % (s.G * s.N) == 0, "schedule.N",
        "G*N=" + std::to_string(s.G * s.N) + " must divide T=" + std::to_string(s.T));
  try {
    build_schedule(s.T, c.beta_start, c.beta_end);
  } catch (const ConfigError& e) {
    doc.fail("schedule.beta_end", e.what());
  }
  check(c.model.d >= 1, "model.d", "model.d must be >= 1");
  check(c.model.h >= 2 && c.model.h % 2 == 0, "model.h", "model.h must be even and >= 2");
  check(c.model.c >= 0, "model.c", "model.c must be >= 0");
  check(c.oracle.rho > -1 && c.oracle.rho < 1, "oracle.rho", "oracle.rho must lie in (-1, 1)");
  check(c.oracle.variance > 0, "oracle.variance", "oracle.variance must be positive");
  check(c.stream.frames >= 1, "stream.frames", "stream.frames must be >= 1");
  check(c.stream.frames % static_cast<std::uint64_t>(s.g()) == 0, "stream.frames",
        "stream.frames=" + std::to_string(c.stream.frames) + " is not a multiple of the group size g=K/G=" +
            std::to_string(s.g()));
  check(c.stream.denoiser == "oracle" || c.stream.denoiser == "toynet", "stream.denoiser",
        "stream.denoiser must be oracle or toynet");
  check(c.stream.denoiser != "toynet" || !c.model.checkpoint.empty(), "stream.denoiser",
        "stream.denoiser=toynet needs model.checkpoint");
  check(c.train.pretrain_steps >= 0, "train.pretrain_steps", "train.pretrain_steps must be >= 0");
  check(c.train.steps >= 0, "train.steps", "train.steps must be >= 0");
  check(c.train.batch >= 1, "train.batch", "train.batch must be >= 1");
  check(c.train.lr >= 0, "train.lr", "train.lr must be >= 0");
  check(c.train.weight_decay >= 0, "train.weight_decay", "train.weight_decay must be >= 0");
  const DistillConfig& d = c.distill.cfg;
  check(c.distill.steps >= 0, "distill.steps", "distill.steps must be >= 0");
  check(d.ema_rate > 0 && d.ema_rate < 1, "distill.ema_rate", "distill.ema_rate must lie in (0, 1)");
  check(d.omega >= 2.0 && d.omega <= 3.5, "distill.omega", "distill.omega must lie in [2.0, 3.5]");
  check(d.huber_c > 0, "distill.huber_c", "distill.huber_c must be positive");
  check(d.solver_steps >= 1 && s.T % d.solver_steps == 0, "distill.solver_steps",
        "distill.solver_steps must divide T=" + std::to_string(s.T));
  check(d.staggered_fraction >= 0 && d.staggered_fraction <= 1, "distill.staggered_fraction",
        "distill.staggered_fraction must lie in [0, 1]");
  check(d.staggered_fraction == 0 || (d.solver_steps >= 1 && s.T % d.solver_steps == 0 &&
                                      (s.T / s.G) % (s.T / d.solver_steps) == 0),
        "distill.staggered_fraction", "staggered distillation pairs need T/G divisible by T/solver_steps");
  check(d.batch >= 1, "distill.batch", "distill.batch must be >= 1");
  check(d.opt.lr >= 0, "distill.lr", "distill.lr must be >= 0");
  check(c.distill.teacher == "oracle" || c.distill.teacher == "toynet", "distill.teacher",
        "distill.teacher must be oracle or toynet");
  check(c.distill.teacher != "toynet" || !c.model.checkpoint.empty(), "distill.teacher",
        "distill.teacher=toynet needs model.checkpoint");
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["schedule"] = {{"K", c.schedule.K}, {"G", c.schedule.G}, {"N", c.schedule.N}, {"T", c.schedule.T},
                   {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
  j["model"] = {{"d", c.model.d}, {"h", c.model.h}, {"c", c.model.c}, {"mask", to_string(c.model.mask)},
                {"checkpoint", c.model.checkpoint}};
  j["oracle"] = {{"rho", c.oracle.rho}, {"mean", c.oracle.mean}, {"variance", c.oracle.variance}};
  j["stream"] = {{"frames", c.stream.frames}, {"denoiser", c.stream.denoiser},
                 {"sampler", to_string(c.stream.sampler)}, {"out", c.stream.out}, {"metrics", c.stream.metrics}};
  j["train"] = {{"pretrain_steps", c.train.pretrain_steps}, {"steps", c.train.steps}, {"batch", c.train.batch},
                {"lr", c.train.lr}, {"weight_decay", c.train.weight_decay}, {"out", c.train.out}, {"log", c.train.log}};
  const DistillConfig& d = c.distill.cfg;
  j["distill"] = {{"steps", c.distill.steps}, {"ema_rate", d.ema_rate}, {"omega", d.omega}, {"huber_c", d.huber_c},
                  {"solver_steps", d.solver_steps}, {"batch", d.batch}, {"lr", d.opt.lr},
                  {"staggered_fraction", d.staggered_fraction}, {"teacher", c.distill.teacher},
                  {"out", c.distill.out}, {"log", c.distill.log}};
  j["landmarks"] = {{"input", c.landmarks.input}, {"table", c.landmarks.table}, {"params", c.landmarks.params},
                    {"out", c.landmarks.out}};
  j["bench"] = {{"out", c.bench.out}, {"series", c.bench.series}};
  j["compare"] = {{"out", c.compare.out}, {"series", c.compare.series}};
  return j;
}

}  // namespace rain
