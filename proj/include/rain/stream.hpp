#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rain/core.hpp"
#include "rain/denoiser.hpp"
#include "rain/diffusion.hpp"
#include "rain/schedule.hpp"

namespace rain {

using Clock = std::chrono::steady_clock;

/// Fixed-capacity FIFO of in-flight latents. Head = oldest, lowest noise.
/// Storage is a ring over a preallocated K x d block, so steady-state
/// push/pop never allocates.
class LatentPile {
 public:
  LatentPile() = default;
  LatentPile(Eigen::Index capacity, Eigen::Index d)
      : frames_(capacity, d), timesteps_(static_cast<std::size_t>(capacity)),
        index_(static_cast<std::size_t>(capacity)), stage_(static_cast<std::size_t>(capacity)),
        pushed_at_(static_cast<std::size_t>(capacity)) {}

  Eigen::Index capacity() const { return frames_.rows(); }
  Eigen::Index d() const { return frames_.cols(); }
  Eigen::Index size() const { return size_; }
  bool empty() const { return size_ == 0; }

  auto frame(Eigen::Index i) { return frames_.row(slot(i)); }
  auto frame(Eigen::Index i) const { return frames_.row(slot(i)); }
  Timestep& timestep(Eigen::Index i) { return timesteps_[slot_u(i)]; }
  Timestep timestep(Eigen::Index i) const { return timesteps_[slot_u(i)]; }
  std::uint64_t index(Eigen::Index i) const { return index_[slot_u(i)]; }
  int& stage(Eigen::Index i) { return stage_[slot_u(i)]; }
  int stage(Eigen::Index i) const { return stage_[slot_u(i)]; }
  Clock::time_point pushed_at(Eigen::Index i) const { return pushed_at_[slot_u(i)]; }

  template <class Row>
  void push(const Row& latent, Timestep t, std::uint64_t global_index, Clock::time_point now) {
    if (size_ == capacity()) throw Error("latent pile overflow");
    const Eigen::Index s = (head_ + size_) % capacity();
    frames_.row(s) = latent;
    const auto su = static_cast<std::size_t>(s);
    timesteps_[su] = t;
    index_[su] = global_index;
    stage_[su] = 0;
    pushed_at_[su] = now;
    ++size_;
  }

  void pop_front() {
    if (size_ == 0) throw Error("latent pile underflow");
    head_ = (head_ + 1) % capacity();
    --size_;
  }

  /// Copies the pile into `out` (resized to size x d) in head-to-tail order.
  void gather(Window& out, Timesteps& t) const {
    out.resize(size_, d());
    t.resize(static_cast<std::size_t>(size_));
    for (Eigen::Index i = 0; i < size_; ++i) {
      out.row(i) = frames_.row(slot(i));
      t[static_cast<std::size_t>(i)] = timesteps_[slot_u(i)];
    }
  }

  Window window() const {
    Window w;
    Timesteps t;
    gather(w, t);
    return w;
  }

  Timesteps timesteps() const {
    Timesteps t(static_cast<std::size_t>(size_));
    for (Eigen::Index i = 0; i < size_; ++i) t[static_cast<std::size_t>(i)] = timestep(i);
    return t;
  }

 private:
  Eigen::Index slot(Eigen::Index i) const { return (head_ + i) % capacity(); }
  std::size_t slot_u(Eigen::Index i) const { return static_cast<std::size_t>(slot(i)); }

  Window frames_;
  Timesteps timesteps_;
  std::vector<std::uint64_t> index_;
  std::vector<int> stage_;
  std::vector<Clock::time_point> pushed_at_;
  Eigen::Index head_ = 0;
  Eigen::Index size_ = 0;
};

enum class Sampler {
  consistency,  // predict clean with the consistency function, re-noise
  ddim,         // deterministic DDIM update from the x0 prediction
};

struct FrameEvent {
  std::uint64_t index = 0;
  Frame latent;
  Clock::duration wall_time{};
  int evaluations = 0;  // denoiser calls this frame received
};

struct StepRecord {
  std::int64_t iteration = 0;
  Eigen::Index pile_len = 0;
  int popped = 0;
  Timestep t0 = 0;
  std::int64_t step_wall_nanos = 0;
  std::int64_t denoiser_nanos = 0;
};

struct EngineState {
  LatentPile pile;
  ScheduleConfig cfg;
  Sampler sampler = Sampler::consistency;
  std::int64_t iteration = 0;
  std::int64_t denoiser_calls = 0;
  std::uint64_t noise_seed = 0;
  std::optional<Frame> reference;
  int warmup_remaining = 0;
  std::uint64_t pushed = 0;
  std::uint64_t popped = 0;
  /// Stop pushing once this many frames have entered; the pile then drains.
  std::optional<std::uint64_t> frame_limit;
  std::vector<StepRecord> records;
  bool keep_records = true;
};

struct EngineOptions {
  Sampler sampler = Sampler::consistency;
  std::optional<Frame> reference;
  std::optional<std::uint64_t> frame_limit;
  bool keep_records = true;
};

namespace detail {

inline bool may_push(const EngineState& s) { return !s.frame_limit || s.pushed < *s.frame_limit; }

inline void push_group(EngineState& s, Clock::time_point now) {
  const Eigen::Index d = s.pile.d();
  const int g = s.cfg.g();
  for (int k = 0; k < g && may_push(s); ++k) {
    s.pile.push(frame_noise(s.noise_seed, s.pushed, 0, d).transpose(), s.cfg.T, s.pushed, now);
    ++s.pushed;
  }
}

}  // namespace detail

/// Soft startup: one group of pure noise at T; the pile grows by one group
/// per step until it holds K frames.
inline EngineState init(const ScheduleConfig& cfg, Eigen::Index d, std::uint64_t seed, EngineOptions opts = {}) {
  cfg.validate();
  if (d < 1) throw ConfigError("frame dimension must be >= 1");
  if (opts.frame_limit && *opts.frame_limit % static_cast<std::uint64_t>(cfg.g()) != 0)
    throw ConfigError("stream length must be a multiple of the group size g=" + std::to_string(cfg.g()));
  EngineState s;
  s.pile = LatentPile(cfg.K, d);
  s.cfg = cfg;
  s.sampler = opts.sampler;
  s.noise_seed = derive_seed(seed, "engine");
  s.reference = std::move(opts.reference);
  s.frame_limit = opts.frame_limit;
  s.keep_records = opts.keep_records;
  s.warmup_remaining = cfg.G - 1;
  detail::push_group(s, Clock::now());
  return s;
}

/// Alternative startup: the whole pile is filled at once with one still
/// image noised to the staggered group levels. Kept for comparison with the
/// soft startup.
inline EngineState init_still(const ScheduleConfig& cfg, const Frame& image, const NoiseSchedule& sched,
                              std::uint64_t seed, EngineOptions opts = {}) {
  EngineState s = init(cfg, image.size(), seed, opts);
  s.pile = LatentPile(cfg.K, image.size());
  s.pushed = 0;
  s.warmup_remaining = 0;
  const auto now = Clock::now();
  const GroupTimesteps ts = group_timesteps(cfg, cfg.level_spacing());
  for (int i = 0; i < cfg.K && detail::may_push(s); ++i) {
    const Frame noise = frame_noise(s.noise_seed, s.pushed, 0, image.size());
    const Timestep t = ts.vec[static_cast<std::size_t>(i)];
    // frames sit at the level their group would have reached had it been
    // pushed as noise; timestep T frames stay pure noise
    s.pile.push(t == cfg.T ? noise : add_noise(image, noise, t, sched), t, s.pushed, now);
    ++s.pushed;
  }
  return s;
}

/// One outer iteration: N denoiser evaluations over the whole pile, then pop
/// the clean head group and push (or grow by) one group of fresh noise.
inline std::vector<FrameEvent> step(EngineState& s, Denoiser& denoiser, const Window& cond_window) {
  const auto start = Clock::now();
  if (s.pile.empty()) throw Error("step called on an empty pile");
  if (cond_window.rows() != s.pile.size())
    throw ShapeError("conditioning window has " + std::to_string(cond_window.rows()) + " rows, pile holds " +
                     std::to_string(s.pile.size()) + " frames");
  const NoiseSchedule& sched = denoiser.schedule();
  if (sched.T() != s.cfg.T) throw ConfigError("denoiser schedule T differs from stream T");
  const Frame* ref = s.reference ? &*s.reference : nullptr;
  const Eigen::Index n = s.pile.size();
  const int dt = s.cfg.step_size();

  StepRecord rec;
  rec.iteration = s.iteration;
  rec.pile_len = n;
  rec.t0 = s.pile.timestep(0);

  Window x;
  Timesteps t;
  Clock::duration in_denoiser{};
  for (int j = 0; j < s.cfg.N; ++j) {
    s.pile.gather(x, t);
    const auto call_start = Clock::now();
    const Window x0 = s.sampler == Sampler::consistency ? denoiser.consistency(x, t, cond_window, ref)
                                                        : denoiser.predict_x0(x, t, cond_window, ref);
    in_denoiser += Clock::now() - call_start;
    ++s.denoiser_calls;
    if (x0.rows() != n || x0.cols() != x.cols()) throw ShapeError("denoiser returned a window of the wrong shape");
    if (!x0.allFinite()) throw NumericError("denoiser produced non-finite values");
    for (Eigen::Index i = 0; i < n; ++i) {
      const Timestep next = std::max(0, t[static_cast<std::size_t>(i)] - dt);
      int& stage = s.pile.stage(i);
      ++stage;
      if (s.sampler == Sampler::consistency) {
        Rng rng(derive_seed(s.noise_seed, s.pile.index(i), static_cast<std::uint64_t>(stage)));
        s.pile.frame(i) = cm_renoise_step(x0.row(i).transpose(), next, rng, sched).transpose();
      } else {
        s.pile.frame(i) =
            ddim_step(x.row(i).transpose(), x0.row(i).transpose(), t[static_cast<std::size_t>(i)], next, sched)
                .transpose();
      }
      s.pile.timestep(i) = next;
    }
  }

  std::vector<FrameEvent> events;
  const auto now = Clock::now();
  while (!s.pile.empty() && s.pile.timestep(0) == 0) {
    events.push_back({s.pile.index(0), s.pile.frame(0).transpose(), now - s.pile.pushed_at(0), s.pile.stage(0)});
    s.pile.pop_front();
    ++s.popped;
  }
  rec.popped = static_cast<int>(events.size());

  if (s.warmup_remaining > 0) {
    --s.warmup_remaining;
    detail::push_group(s, now);
  } else if (!events.empty()) {
    detail::push_group(s, now);
  }
  ++s.iteration;

  rec.denoiser_nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(in_denoiser).count();
  rec.step_wall_nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
  if (s.keep_records) s.records.push_back(rec);
  return events;
}

/// Yields the conditioning frame for the next global frame index, or
/// nullopt when the source is exhausted.
using CondSource = std::function<std::optional<Frame>()>;

struct StreamResult {
  std::vector<Frame> frames;
  std::vector<StepRecord> records;
  std::int64_t iterations = 0;
  std::int64_t denoiser_calls = 0;
};

/// Streams exactly L frames: soft startup, steady state, then drain.
inline StreamResult run_stream(const ScheduleConfig& cfg, Denoiser& denoiser, Eigen::Index d, const CondSource& cond,
                               std::uint64_t L, std::uint64_t seed, EngineOptions opts = {},
                               const std::function<void(const FrameEvent&)>& on_frame = {}) {
  cfg.validate();
  if (L == 0 || L % static_cast<std::uint64_t>(cfg.g()) != 0)
    throw ConfigError("stream length L=" + std::to_string(L) + " must be a positive multiple of g=" +
                      std::to_string(cfg.g()));
  opts.frame_limit = L;
  EngineState s = init(cfg, d, seed, std::move(opts));

  std::vector<Frame> cond_buffer;  // by global frame index
  Eigen::Index cond_dim = -1;
  auto fetch_cond = [&](std::uint64_t upto) {
    while (cond_buffer.size() < upto) {
      std::optional<Frame> c = cond ? cond() : std::optional<Frame>(Frame());
      if (!c) throw Error("conditioning stream exhausted at frame " + std::to_string(cond_buffer.size()));
      if (cond_dim < 0) cond_dim = c->size();
      if (c->size() != cond_dim) throw ShapeError("conditioning frames changed dimension");
      cond_buffer.push_back(std::move(*c));
    }
  };

  StreamResult out;
  out.frames.resize(static_cast<std::size_t>(L));
  std::uint64_t emitted = 0;
  Window cond_window;
  while (!s.pile.empty()) {
    fetch_cond(s.pushed);
    cond_window.resize(s.pile.size(), std::max<Eigen::Index>(cond_dim, 0));
    for (Eigen::Index i = 0; i < s.pile.size(); ++i)
      if (cond_dim > 0) cond_window.row(i) = cond_buffer[static_cast<std::size_t>(s.pile.index(i))].transpose();
    for (FrameEvent& e : step(s, denoiser, cond_window)) {
      if (e.index != emitted) throw Error("stream emitted frames out of order");
      if (on_frame) on_frame(e);
      out.frames[static_cast<std::size_t>(e.index)] = std::move(e.latent);
      ++emitted;
    }
  }
  if (emitted != L) throw Error("stream ended after " + std::to_string(emitted) + " of " + std::to_string(L) + " frames");
  out.records = std::move(s.records);
  out.iterations = s.iteration;
  out.denoiser_calls = s.denoiser_calls;
  return out;
}

/// Conditioning from a precomputed L x c window (c may be 0).
inline CondSource cond_from_window(const Window& cond) {
  auto next = std::make_shared<Eigen::Index>(0);
  return [cond, next]() -> std::optional<Frame> {
    if (*next >= cond.rows()) return std::nullopt;
    return Frame(cond.row((*next)++).transpose());
  };
}

/// Unbounded source of empty conditioning frames.
inline CondSource no_cond() {
  return []() -> std::optional<Frame> { return Frame(); };
}

}  // namespace rain
