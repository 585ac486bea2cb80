#pragma once

// Pinned experiment presets. Any change to a value below must bump
// kPresetVersion so results stay traceable to the settings that made them.

#include <string>
#include <string_view>

#include "ravg/experiments.hpp"

namespace ravg {

inline constexpr int kPresetVersion = 1;

enum class Scale { desk, paper };

inline Scale parse_scale(std::string_view s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw Error(Errc::invalid_argument, "unknown scale '" + std::string(s) + "' (desk|paper)");
}

struct RecoveryPreset {
  std::size_t p;
  std::size_t k;
  double strong;
  double weak;
  std::uint64_t strong_n[3];
  std::uint64_t weak_n[3];
  std::size_t seeds;
  std::size_t test_size;
};

// Regression (t2) and classification (t3) share a layout.
inline constexpr RecoveryPreset kRecoveryDesk{100, 10, 1.0, 0.01, {1000, 3000, 10000}, {1000, 10000, 100000}, 20, 10000};
inline constexpr RecoveryPreset kRecoveryPaper{1000, 100, 1.0, 0.01, {1000, 3000, 10000}, {1000, 10000, 100000}, 100, 10000};

struct RegretPreset {
  std::size_t p;
  std::size_t k_star;
  std::size_t spacing;
  std::uint64_t n_lo;
  std::uint64_t n_hi;
  std::size_t checkpoints;
  std::size_t seeds;
};

inline constexpr RegretPreset kRegretDesk{10, 3, 3, 1000, 100000, 21, 20};
inline constexpr RegretPreset kRegretPaper{10, 3, 3, 1000, 1000000, 31, 100};

struct BoundsPreset {
  std::size_t seeds;
  std::size_t n_sweep_p;
  std::size_t n_sweep_k;
  std::uint64_t n_sweep[5];
  std::uint64_t k_sweep_n;
  std::size_t k_sweep_p;
  std::size_t k_sweep[3];
  std::uint64_t p_sweep_n;
  std::size_t p_sweep_k;
  std::size_t p_sweep[4];
};

inline constexpr BoundsPreset kBoundsDesk{100, 256, 32, {1024, 2048, 4096, 8192, 16384}, 4096, 512, {8, 16, 32}, 4096, 16, {128, 256, 512, 1024}};
inline constexpr BoundsPreset kBoundsPaper = kBoundsDesk;

struct DriftPreset {
  std::size_t seeds;
  std::size_t tail;
};

inline constexpr DriftPreset kDriftDesk{5, 300};
inline constexpr DriftPreset kDriftPaper{20, 300};

inline const RecoveryPreset& recovery_preset(Scale s) { return s == Scale::desk ? kRecoveryDesk : kRecoveryPaper; }
inline const RegretPreset& regret_preset(Scale s) { return s == Scale::desk ? kRegretDesk : kRegretPaper; }
inline const BoundsPreset& bounds_preset(Scale s) { return s == Scale::desk ? kBoundsDesk : kBoundsPaper; }
inline const DriftPreset& drift_preset(Scale s) { return s == Scale::desk ? kDriftDesk : kDriftPaper; }

/// Strong- and weak-signal configs of a recovery table.
inline std::vector<RecoveryConfig> recovery_configs(Scale scale, Task task) {
  const auto& ps = recovery_preset(scale);
  std::vector<RecoveryConfig> out;
  for (int weak = 0; weak < 2; ++weak) {
    RecoveryConfig cfg;
    cfg.gen.p = ps.p;
    cfg.gen.k_star = ps.k;
    cfg.gen.task = task;
    cfg.gen.beta_strength = weak ? ps.weak : ps.strong;
    const auto& ns = weak ? ps.weak_n : ps.strong_n;
    cfg.sample_sizes.assign(std::begin(ns), std::end(ns));
    cfg.methods = {Method::olsth, Method::ofsa, Method::omcp, Method::oelnet};
    cfg.seeds = ps.seeds;
    cfg.test_size = ps.test_size;
    out.push_back(cfg);
  }
  return out;
}

inline RegretConfig regret_config(Scale scale) {
  const auto& ps = regret_preset(scale);
  RegretConfig cfg;
  cfg.gen.p = ps.p;
  cfg.gen.k_star = ps.k_star;
  cfg.gen.spacing = ps.spacing;
  cfg.gen.n = ps.n_hi;
  cfg.checkpoints = log_checkpoints(ps.n_lo, ps.n_hi, ps.checkpoints);
  cfg.seeds = ps.seeds;
  return cfg;
}

/// The three beta_min sweeps: over n, over k*, over p.
inline std::vector<BetaMinConfig> bounds_configs(Scale scale) {
  const auto& ps = bounds_preset(scale);
  std::vector<BetaMinConfig> out(2);
  out[0].p = ps.n_sweep_p;
  out[0].k_stars = {ps.n_sweep_k};
  out[0].sample_sizes.assign(std::begin(ps.n_sweep), std::end(ps.n_sweep));
  out[1].p = ps.k_sweep_p;
  out[1].k_stars.assign(std::begin(ps.k_sweep), std::end(ps.k_sweep));
  out[1].sample_sizes = {ps.k_sweep_n};
  for (auto& c : out) c.seeds = ps.seeds;
  for (auto p : ps.p_sweep) {
    BetaMinConfig c;
    c.p = p;
    c.k_stars = {ps.p_sweep_k};
    c.sample_sizes = {ps.p_sweep_n};
    c.seeds = ps.seeds;
    out.push_back(c);
  }
  return out;
}

inline AdaptationConfig drift_config(Scale scale, bool pricing) {
  const auto& ps = drift_preset(scale);
  AdaptationConfig cfg;
  cfg.seeds = ps.seeds;
  cfg.tail = ps.tail;
  cfg.pricing = pricing;
  return cfg;
}

}  // namespace ravg
