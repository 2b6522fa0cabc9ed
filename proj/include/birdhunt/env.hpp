#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "birdhunt/common.hpp"
#include "json.hpp"

namespace birdhunt {

enum class Tier { Low, Medium, High };
enum class Species { Yellow, Red, Black };

inline constexpr std::array<Species, 3> kAllSpecies{Species::Yellow, Species::Red,
                                                    Species::Black};

inline const char* to_string(Tier tier) {
  switch (tier) {
    case Tier::Low: return "LOW";
    case Tier::Medium: return "MEDIUM";
    case Tier::High: return "HIGH";
  }
  return "?";
}

inline const char* to_string(Species s) {
  switch (s) {
    case Species::Yellow: return "YELLOW";
    case Species::Red: return "RED";
    case Species::Black: return "BLACK";
  }
  return "?";
}

inline Tier parse_tier(const std::string& s) {
  if (s == "LOW") return Tier::Low;
  if (s == "MEDIUM") return Tier::Medium;
  if (s == "HIGH") return Tier::High;
  fail(ErrorKind::InvalidConfig, "unknown tier '" + s + "'");
}

inline Species parse_species(const std::string& s) {
  if (s == "YELLOW") return Species::Yellow;
  if (s == "RED") return Species::Red;
  if (s == "BLACK") return Species::Black;
  fail(ErrorKind::InvalidConfig, "unknown species '" + s + "'");
}

namespace reward {
inline constexpr double kYellowHit = 1.0;
inline constexpr double kRedHit = 2.0;
inline constexpr double kBlackHit = -0.5;
inline constexpr double kMiss = -0.01;
inline constexpr double kReloading = 0.0;
}  // namespace reward

inline double hit_reward(Species s) {
  switch (s) {
    case Species::Yellow: return reward::kYellowHit;
    case Species::Red: return reward::kRedHit;
    case Species::Black: return reward::kBlackHit;
  }
  return 0.0;
}

// Legal per-step rewards for a tier.
inline std::vector<double> reward_set(Tier tier) {
  if (tier == Tier::High) {
    return {reward::kYellowHit, reward::kRedHit, reward::kMiss, reward::kBlackHit,
            reward::kReloading};
  }
  return {reward::kYellowHit, reward::kMiss};
}

inline bool is_legal_reward(Tier tier, double r) {
  const auto legal = reward_set(tier);
  return std::find(legal.begin(), legal.end(), r) != legal.end();
}

inline double max_episode_return(Tier tier) { return tier == Tier::High ? 2.0 : 1.0; }

/// Spawn and appearance parameters of one species. Spawn means and standard
/// deviations are fractions of the screen size so presets scale with the
/// resolution.
struct SpeciesParams {
  std::array<float, 3> color{};
  std::array<double, 2> spawn_mean{0.5, 0.5};
  std::array<double, 2> spawn_std{0.25, 0.25};

  bool operator==(const SpeciesParams&) const = default;
};

inline std::array<SpeciesParams, 3> default_species() {
  return {{
      {{1.0f, 1.0f, 0.0f}, {0.5, 0.5}, {0.25, 0.25}},
      {{1.0f, 0.0f, 0.0f}, {0.3, 0.3}, {0.08, 0.08}},
      {{0.0f, 0.0f, 0.0f}, {0.65, 0.6}, {0.15, 0.15}},
  }};
}

struct EnvConfig {
  Tier tier = Tier::Low;
  int width = 50;
  int height = 50;
  int channels = 1;
  int clip_size = 5;
  int t_reload = 3;
  int max_episode_steps = 200;
  std::uint64_t spawn_seed = 0;
  double bird_speed = 0.25;
  // Half-width of a bird box; unset means 2 pixels at 50x50, scaled with the
  // smaller screen dimension.
  std::optional<double> bird_extent;
  bool render_crosshair = true;
  std::array<SpeciesParams, 3> species = default_species();

  double extent() const {
    if (bird_extent) return *bird_extent;
    return 2.0 * std::min(width, height) / 50.0;
  }

  const SpeciesParams& params(Species s) const {
    return species[static_cast<std::size_t>(s)];
  }

  std::size_t observation_size() const {
    return static_cast<std::size_t>(width) * height * channels;
  }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::InvalidConfig, m); };
    if (width < 4 || height < 4) bad("width and height must be >= 4");
    if (channels != 1 && channels != 3) bad("channels must be 1 or 3");
    if (tier == Tier::Low && channels != 1) bad("LOW tier renders a single channel");
    if (tier != Tier::Low && channels != 3) bad("MEDIUM/HIGH tiers render three channels");
    if (tier == Tier::High && (clip_size < 1 || t_reload < 1))
      bad("clip_size and t_reload must be >= 1 in HIGH tier");
    if (max_episode_steps < 1) bad("max_episode_steps must be >= 1");
    if (!(bird_speed >= 0.0) || !std::isfinite(bird_speed)) bad("bird_speed must be finite and >= 0");
    const double e = extent();
    if (!(e >= 0.5) || !std::isfinite(e)) bad("bird extent must be >= 0.5 so a box covers a pixel");
    if (2.0 * e > std::min(width, height)) bad("bird extent does not fit on screen");
    for (const auto& sp : species) {
      for (float c : sp.color)
        if (!(c >= 0.0f && c <= 1.0f)) bad("species colors must lie in [0,1]");
      for (double s : sp.spawn_std)
        if (!(s >= 0.0)) bad("spawn std must be >= 0");
    }
  }

  bool operator==(const EnvConfig&) const = default;
};

/// Desk-scale (20x20) and full-scale (50x50) presets.
inline EnvConfig make_env_config(Tier tier, int size = 50) {
  EnvConfig c;
  c.tier = tier;
  c.width = c.height = size;
  c.channels = tier == Tier::Low ? 1 : 3;
  return c;
}

/// 20x20 desk preset with 4x4-pixel birds.
inline EnvConfig desk_env_config(Tier tier) {
  EnvConfig c = make_env_config(tier, 20);
  c.bird_extent = 2.0;
  return c;
}

inline nlohmann::json to_json(const EnvConfig& c) {
  nlohmann::json species = nlohmann::json::object();
  for (Species s : kAllSpecies) {
    const auto& p = c.params(s);
    species[to_string(s)] = {{"color", p.color},
                             {"reward", hit_reward(s)},
                             {"spawn_mean", p.spawn_mean},
                             {"spawn_std", p.spawn_std}};
  }
  nlohmann::json j = {{"tier", to_string(c.tier)},
                      {"width", c.width},
                      {"height", c.height},
                      {"channels", c.channels},
                      {"clip_size", c.clip_size},
                      {"t_reload", c.t_reload},
                      {"max_episode_steps", c.max_episode_steps},
                      {"spawn_seed", c.spawn_seed},
                      {"bird_speed", c.bird_speed},
                      {"render_crosshair", c.render_crosshair},
                      {"species", species}};
  j["bird_extent"] = c.bird_extent ? nlohmann::json(*c.bird_extent) : nlohmann::json(nullptr);
  return j;
}

inline EnvConfig env_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, "env config must be a JSON object");
  EnvConfig c;
  try {
    c.tier = parse_tier(j.at("tier").get<std::string>());
    c.width = j.value("width", 50);
    c.height = j.value("height", 50);
    c.channels = j.value("channels", c.tier == Tier::Low ? 1 : 3);
    c.clip_size = j.value("clip_size", c.clip_size);
    c.t_reload = j.value("t_reload", c.t_reload);
    c.max_episode_steps = j.value("max_episode_steps", c.max_episode_steps);
    c.spawn_seed = j.value("spawn_seed", std::uint64_t{0});
    c.bird_speed = j.value("bird_speed", c.bird_speed);
    c.render_crosshair = j.value("render_crosshair", true);
    if (j.contains("bird_extent") && !j["bird_extent"].is_null())
      c.bird_extent = j["bird_extent"].get<double>();
    if (j.contains("species")) {
      for (const auto& [name, sp] : j["species"].items()) {
        auto& p = c.species[static_cast<std::size_t>(parse_species(name))];
        if (sp.contains("color")) p.color = sp["color"].get<std::array<float, 3>>();
        if (sp.contains("spawn_mean")) p.spawn_mean = sp["spawn_mean"].get<std::array<double, 2>>();
        if (sp.contains("spawn_std")) p.spawn_std = sp["spawn_std"].get<std::array<double, 2>>();
        if (sp.contains("reward") && sp["reward"].get<double>() != hit_reward(parse_species(name)))
          fail(ErrorKind::InvalidConfig, "species reward table is fixed; got a different reward for " + name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("malformed env config: ") + e.what());
  }
  c.validate();
  return c;
}

struct ActionPair {
  int x = 0;
  int y = 0;
  bool operator==(const ActionPair&) const = default;
};

struct Bird {
  Species species = Species::Yellow;
  double x = 0.0;
  double y = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double extent = 1.0;

  // Half-open box [x - extent, x + extent) on each axis; pixel p is covered
  // when its integer coordinate falls inside.
  bool covers(double px, double py) const {
    return px >= x - extent && px < x + extent && py >= y - extent && py < y + extent;
  }
};

struct Crosshair {
  int x = 0;
  int y = 0;
  bool operator==(const Crosshair&) const = default;
};

struct EnvState {
  std::vector<Bird> birds;
  Crosshair crosshair;
  int ammo = 0;
  std::int64_t t = 0;
  std::int64_t yellow_hits_total = 0;
  int episode_step = 0;
  std::int64_t episode_index = 0;
  bool red_pending = false;
  Rng rng;
};

using Observation = std::vector<float>;

enum class ShotOutcome { Miss, Hit, Reloading };

inline const char* to_string(ShotOutcome o) {
  switch (o) {
    case ShotOutcome::Miss: return "MISS";
    case ShotOutcome::Hit: return "HIT";
    case ShotOutcome::Reloading: return "RELOADING";
  }
  return "?";
}

struct StepInfo {
  ShotOutcome outcome = ShotOutcome::Miss;
  std::optional<Species> hit_species;
  int ammo_after = 0;
  bool truncated = false;  // ended by the step cap rather than a hit
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Ammunition state machine: decrement while loaded, refill to a full clip on
// the reload boundary t mod (clip + reload) == 0, otherwise stay empty.
inline int ammo_transition(int ammo_prev, std::int64_t t, int clip_size, int t_reload) {
  if (ammo_prev > 0) return ammo_prev - 1;
  if (t % (clip_size + t_reload) == 0) return clip_size;
  return 0;
}

namespace detail {

// Integer pixel range covered by a half-open box [c - e, c + e).
inline std::pair<int, int> covered_range(double c, double e) {
  return {static_cast<int>(std::ceil(c - e)), static_cast<int>(std::ceil(c + e)) - 1};
}

inline std::array<float, 3> backdrop(const EnvConfig& cfg, int x, int y) {
  const float fy = cfg.height > 1 ? static_cast<float>(y) / static_cast<float>(cfg.height - 1) : 0.0f;
  const float fx = cfg.width > 1 ? static_cast<float>(x) / static_cast<float>(cfg.width - 1) : 0.0f;
  return {0.15f + 0.25f * fy, 0.35f + 0.2f * fy + 0.1f * fx, 0.85f - 0.3f * fy};
}

inline constexpr float kLowCrosshair = 0.5f;
inline constexpr std::array<float, 3> kRgbCrosshair{1.0f, 0.0f, 1.0f};
inline constexpr float kBlackOutline = 0.1f;

}  // namespace detail

// Row-major, channel-interleaved: index = (y * width + x) * channels + c.
inline Observation render_observation(const EnvState& state, const EnvConfig& cfg) {
  const int w = cfg.width, h = cfg.height, ch = cfg.channels;
  Observation obs(cfg.observation_size(), 0.0f);
  auto at = [&](int x, int y, int c) -> float& {
    return obs[(static_cast<std::size_t>(y) * w + x) * ch + c];
  };
  if (ch == 3) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto bg = detail::backdrop(cfg, x, y);
        for (int c = 0; c < 3; ++c) at(x, y, c) = bg[c];
      }
  }
  // Draw order is yellow, red, black so bombs sit on top.
  for (Species s : kAllSpecies) {
    for (const Bird& b : state.birds) {
      if (b.species != s) continue;
      auto [x0, x1] = detail::covered_range(b.x, b.extent);
      auto [y0, y1] = detail::covered_range(b.y, b.extent);
      x0 = std::max(x0, 0), y0 = std::max(y0, 0);
      x1 = std::min(x1, w - 1), y1 = std::min(y1, h - 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (ch == 1) {
            at(x, y, 0) = 1.0f;
            continue;
          }
          const bool edge = x == x0 || x == x1 || y == y0 || y == y1;
          const auto& color = cfg.params(s).color;
          for (int c = 0; c < 3; ++c)
            at(x, y, c) = (s == Species::Black && edge) ? detail::kBlackOutline : color[c];
        }
    }
  }
  if (cfg.render_crosshair) {
    const auto [cx, cy] = state.crosshair;
    if (ch == 1) {
      at(cx, cy, 0) = detail::kLowCrosshair;
    } else {
      for (int c = 0; c < 3; ++c) at(cx, cy, c) = detail::kRgbCrosshair[c];
    }
  }
  return obs;
}

// Topmost bird covering the pixel, if any.
inline std::optional<std::size_t> bird_at(const EnvState& state, int px, int py) {
  std::optional<std::size_t> found;
  int best_layer = -1;
  for (std::size_t i = 0; i < state.birds.size(); ++i) {
    const Bird& b = state.birds[i];
    const int layer = static_cast<int>(b.species);
    if (b.covers(px, py) && layer > best_layer) {
      best_layer = layer;
      found = i;
    }
  }
  return found;
}

/// Scripted demonstrator. With probability 1 - epsilon it aims at the covered
/// pixel nearest the center of the most valuable non-bomb bird; otherwise it
/// aims at a uniformly random pixel not covered by any bird.
inline ActionPair oracle_policy(const EnvState& state, const EnvConfig& cfg, double epsilon,
                                Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    fail(ErrorKind::InvalidArgument, "oracle epsilon must lie in [0,1]");
  const bool explore = uniform01(rng) < epsilon;
  const Bird* target = nullptr;
  for (const Bird& b : state.birds) {
    if (b.species == Species::Black) continue;
    if (!target || hit_reward(b.species) > hit_reward(target->species)) target = &b;
  }
  if (!explore && target) {
    auto aim = [](double c, double e, int size) {
      auto [lo, hi] = detail::covered_range(c, e);
      lo = std::max(lo, 0);
      hi = std::min(hi, size - 1);
      return std::clamp(static_cast<int>(std::lround(c)), lo, hi);
    };
    return {aim(target->x, target->extent, cfg.width), aim(target->y, target->extent, cfg.height)};
  }
  std::vector<ActionPair> free;
  free.reserve(static_cast<std::size_t>(cfg.width) * cfg.height);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      if (!bird_at(state, x, y)) free.push_back({x, y});
  if (free.empty()) return {0, 0};
  return free[static_cast<std::size_t>(uniform_index(rng, static_cast<std::int64_t>(free.size())))];
}

/// Bird-hunter simulation. Construction starts a run; reset() starts a new
/// episode while the global step counter and the yellow-hit counter carry over.
class BirdHunterEnv {
 public:
  BirdHunterEnv(EnvConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    state_.rng.seed(seed);
    reset();
  }

  const EnvConfig& config() const { return config_; }
  const EnvState& state() const { return state_; }
  std::uint64_t seed() const { return seed_; }

  /// Replaces the live state (scripted scenarios and tests).
  void set_state(EnvState s) { state_ = std::move(s); }

  Observation reset() {
    state_.birds.clear();
    state_.episode_step = 0;
    state_.ammo = config_.clip_size;
    state_.crosshair = {config_.width / 2, config_.height / 2};
    spawn(Species::Yellow);
    if (config_.tier == Tier::High) {
      if (state_.red_pending) {
        spawn(Species::Red);
        state_.red_pending = false;
      }
      spawn(Species::Black);
    }
    if (state_.t > 0 || state_.episode_index > 0) ++state_.episode_index;
    return observe();
  }

  Observation observe() const { return render_observation(state_, config_); }

  StepResult step(ActionPair action) {
    if (action.x < 0 || action.x >= config_.width || action.y < 0 || action.y >= config_.height)
      fail(ErrorKind::InvalidArgument, "action (" + std::to_string(action.x) + "," +
                                           std::to_string(action.y) + ") outside the " +
                                           std::to_string(config_.width) + "x" +
                                           std::to_string(config_.height) + " screen");
    ++state_.t;
    ++state_.episode_step;
    state_.crosshair = {action.x, action.y};

    StepResult result;
    if (config_.tier == Tier::High && state_.ammo == 0) {
      state_.ammo = ammo_transition(0, state_.t, config_.clip_size, config_.t_reload);
      result.reward = reward::kReloading;
      result.info.outcome = ShotOutcome::Reloading;
    } else {
      if (config_.tier == Tier::High)
        state_.ammo = ammo_transition(state_.ammo, state_.t, config_.clip_size, config_.t_reload);
      if (auto idx = bird_at(state_, action.x, action.y)) {
        const Species s = state_.birds[*idx].species;
        state_.birds.erase(state_.birds.begin() + static_cast<std::ptrdiff_t>(*idx));
        result.reward = hit_reward(s);
        result.done = true;
        result.info.outcome = ShotOutcome::Hit;
        result.info.hit_species = s;
        if (s == Species::Yellow) {
          ++state_.yellow_hits_total;
          if (config_.tier == Tier::High && state_.yellow_hits_total % 2 == 0) state_.red_pending = true;
        }
      } else {
        result.reward = reward::kMiss;
        result.info.outcome = ShotOutcome::Miss;
      }
    }
    if (!result.done) advance_birds();
    if (!result.done && state_.episode_step >= config_.max_episode_steps) {
      result.done = true;
      result.info.truncated = true;
    }
    result.info.ammo_after = state_.ammo;
    result.observation = observe();
    return result;
  }

 private:
  Bird sample_bird(Species s) {
    const auto& p = config_.params(s);
    const double e = config_.extent();
    Bird b;
    b.species = s;
    b.extent = e;
    b.x = std::clamp(config_.width * (p.spawn_mean[0] + p.spawn_std[0] * standard_normal(state_.rng)),
                     e, config_.width - e);
    b.y = std::clamp(config_.height * (p.spawn_mean[1] + p.spawn_std[1] * standard_normal(state_.rng)),
                     e, config_.height - e);
    const double angle = 6.283185307179586 * uniform01(state_.rng);
    b.dx = config_.bird_speed * std::cos(angle);
    b.dy = config_.bird_speed * std::sin(angle);
    return b;
  }

  bool overlaps_any(const Bird& b, const Bird* skip) const {
    for (const Bird& o : state_.birds) {
      if (&o == skip) continue;
      if (std::abs(o.x - b.x) < o.extent + b.extent && std::abs(o.y - b.y) < o.extent + b.extent)
        return true;
    }
    return false;
  }

  Bird sample_placed(Species s, const Bird* skip) {
    Bird b = sample_bird(s);
    for (int attempt = 0; attempt < 16 && overlaps_any(b, skip); ++attempt) b = sample_bird(s);
    return b;
  }

  void spawn(Species s) { state_.birds.push_back(sample_placed(s, nullptr)); }

  void advance_birds() {
    for (Bird& b : state_.birds) {
      b.x += b.dx;
      b.y += b.dy;
      const bool out = b.x - b.extent < 0.0 || b.x + b.extent > config_.width ||
                       b.y - b.extent < 0.0 || b.y + b.extent > config_.height;
      if (out) b = sample_placed(b.species, &b);
    }
  }

  EnvConfig config_;
  std::uint64_t seed_;
  EnvState state_;
};

}  // namespace birdhunt
