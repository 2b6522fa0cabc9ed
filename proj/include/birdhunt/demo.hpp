#pragma once

// Demonstration files (.demo.jsonl).
//
// Line 1 is a JSON header; each further line is one step:
//   {"i": index, "obs": base64 float32 (optional), "a": [x, y], "r": reward, "d": done}
// The header checksum is SHA-256 over every byte after the header line.
// While recording, lines stream to "<file>.partial"; close() writes the final
// file and removes the partial one, so an interrupted recording is detectable.

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "birdhunt/crypto.hpp"
#include "birdhunt/env.hpp"
#include "json.hpp"

namespace birdhunt {

inline constexpr const char* kDemoFormat = "birdhunt-demo";
inline constexpr const char* kDemoVersion = "1";

struct DemoHeader {
  EnvConfig env;
  std::string recorder;
  std::uint64_t seed = 0;
  std::string created;
  std::int64_t episodes = 0;  // complete episodes
  std::int64_t records = 0;
  // Records after the last done flag (a recording stopped mid-episode).
  std::int64_t open_tail = 0;
  bool observations = true;
  std::string checksum;
};

struct DemoRecord {
  std::int64_t index = 0;
  std::optional<Observation> obs;  // observation the action was chosen on
  ActionPair action;
  double reward = 0.0;
  bool done = false;
};

struct DemoFile {
  DemoHeader header;
  std::vector<DemoRecord> records;
};

struct DemoSummary {
  double mean_reward = 0.0;
  std::int64_t episodes = 0;
  std::int64_t records = 0;
  std::int64_t misses = 0;
  std::int64_t reloads = 0;
  std::array<std::int64_t, 3> hits{};  // indexed by Species

  std::int64_t hits_of(Species s) const { return hits[static_cast<std::size_t>(s)]; }
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

inline nlohmann::json header_json(const DemoHeader& h, bool partial) {
  nlohmann::json j = {{"format", kDemoFormat},     {"version", kDemoVersion}, {"env", to_json(h.env)},
                      {"recorder", h.recorder},    {"seed", h.seed},          {"created", h.created},
                      {"observations", h.observations}};
  if (partial) {
    j["partial"] = true;
  } else {
    j["episodes"] = h.episodes;
    j["records"] = h.records;
    j["open_tail"] = h.open_tail;
    j["checksum"] = h.checksum;
  }
  return j;
}

inline nlohmann::json record_json(const DemoRecord& r) {
  nlohmann::json j = {{"i", r.index}, {"a", {r.action.x, r.action.y}}, {"r", r.reward}, {"d", r.done}};
  if (r.obs) j["obs"] = encode_floats(*r.obs);
  return j;
}

inline DemoRecord record_from_json(const nlohmann::json& j) {
  DemoRecord r;
  r.index = j.at("i").get<std::int64_t>();
  const auto& a = j.at("a");
  if (!a.is_array() || a.size() != 2) fail(ErrorKind::Corrupt, "record action must be [x, y]");
  r.action = {a[0].get<int>(), a[1].get<int>()};
  r.reward = j.at("r").get<double>();
  r.done = j.at("d").get<bool>();
  if (auto it = j.find("obs"); it != j.end()) r.obs = decode_floats(it->get<std::string>());
  return r;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RawDemo {
  DemoFile demo;
  bool checksum_ok = true;
};

inline RawDemo parse_demo_text(const std::string& text) {
  RawDemo raw;
  const auto nl = text.find('\n');
  if (nl == std::string::npos) fail(ErrorKind::Corrupt, "demo file has no header line");
  const std::string_view body(text.data() + nl + 1, text.size() - nl - 1);
  nlohmann::json hj;
  try {
    hj = nlohmann::json::parse(text.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("demo header is not valid JSON: ") + e.what());
  }
  if (hj.value("format", "") != kDemoFormat) fail(ErrorKind::Corrupt, "not a birdhunt demo file");
  if (hj.value("version", "") != kDemoVersion)
    fail(ErrorKind::Incompatible, "unsupported demo format version '" + hj.value("version", "") + "'");
  if (hj.value("partial", false))
    fail(ErrorKind::Corrupt, "demo recording was never finalized (partial file)");
  auto& h = raw.demo.header;
  try {
    h.env = env_config_from_json(hj.at("env"));
    h.recorder = hj.at("recorder").get<std::string>();
    h.seed = hj.at("seed").get<std::uint64_t>();
    h.created = hj.at("created").get<std::string>();
    h.episodes = hj.at("episodes").get<std::int64_t>();
    h.records = hj.at("records").get<std::int64_t>();
    h.open_tail = hj.value("open_tail", std::int64_t{0});
    h.observations = hj.at("observations").get<bool>();
    h.checksum = hj.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("malformed demo header: ") + e.what());
  }
  raw.checksum_ok = h.checksum == "sha256:" + sha256_hex(body);

  std::size_t pos = 0;
  std::int64_t line_no = 2;
  while (pos < body.size()) {
    auto end = body.find('\n', pos);
    if (end == std::string_view::npos) end = body.size();
    const auto line = body.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) {
      ++line_no;
      continue;
    }
    try {
      raw.demo.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      if (!raw.checksum_ok) fail(ErrorKind::Corrupt, "demo checksum mismatch");
      fail(ErrorKind::Corrupt, "malformed demo record on line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error&) {
      if (!raw.checksum_ok) fail(ErrorKind::Corrupt, "demo checksum mismatch");
      throw;
    }
    ++line_no;
  }
  return raw;
}

}  // namespace detail

/// Streams a recording to "<path>.partial" and finalizes it on close().
class DemoWriter {
 public:
  DemoWriter(std::filesystem::path path, EnvConfig env, std::uint64_t seed, std::string recorder,
             bool observations = true, std::string created = utc_timestamp())
      : path_(std::move(path)), partial_(path_.string() + ".partial") {
    env.validate();
    header_.env = std::move(env);
    header_.seed = seed;
    header_.recorder = std::move(recorder);
    header_.observations = observations;
    header_.created = std::move(created);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(partial_, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorKind::Io, "cannot create " + partial_.string());
    out_ << detail::header_json(header_, true).dump() << '\n';
    out_.flush();
  }

  DemoWriter(const DemoWriter&) = delete;
  DemoWriter& operator=(const DemoWriter&) = delete;

  const std::filesystem::path& path() const { return path_; }
  const std::filesystem::path& partial_path() const { return partial_; }
  const EnvConfig& env() const { return header_.env; }
  std::int64_t records() const { return header_.records; }
  std::int64_t episodes() const { return header_.episodes; }
  bool closed() const { return closed_; }

  // `env` is the configuration the step ran under; it may not change mid-file.
  void append(const EnvConfig& env, std::span<const float> obs, ActionPair action, double reward, bool done) {
    if (closed_) fail(ErrorKind::InvalidArgument, "demo recording already closed");
    if (!(env == header_.env)) fail(ErrorKind::InvalidArgument, "environment config changed during a recording");
    DemoRecord r;
    r.index = header_.records;
    if (header_.observations) {
      if (obs.size() != env.observation_size()) fail(ErrorKind::InvalidArgument, "observation size does not match env");
      r.obs = Observation(obs.begin(), obs.end());
    }
    r.action = action;
    r.reward = reward;
    r.done = done;
    out_ << detail::record_json(r).dump() << '\n';
    if (!out_) fail(ErrorKind::Io, "write failed on " + partial_.string());
    ++header_.records;
    if (done) {
      ++header_.episodes;
      header_.open_tail = 0;
    } else {
      ++header_.open_tail;
    }
  }

  /// Writes the final file (header with counts and checksum) and removes the
  /// partial file. Returns the final header.
  DemoHeader close() {
    if (closed_) return header_;
    out_.close();
    const std::string text = detail::read_file(partial_);
    const auto nl = text.find('\n');
    const std::string_view body(text.data() + nl + 1, text.size() - nl - 1);
    header_.checksum = "sha256:" + sha256_hex(body);
    const std::filesystem::path tmp = path_.string() + ".tmp";
    {
      std::ofstream fin(tmp, std::ios::binary | std::ios::trunc);
      if (!fin) fail(ErrorKind::Io, "cannot create " + tmp.string());
      fin << detail::header_json(header_, false).dump() << '\n';
      fin.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!fin) fail(ErrorKind::Io, "write failed on " + tmp.string());
    }
    std::filesystem::rename(tmp, path_);
    std::filesystem::remove(partial_);
    closed_ = true;
    return header_;
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path partial_;
  DemoHeader header_;
  std::ofstream out_;
  bool closed_ = false;
};

inline DemoFile load_demo(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    if (std::filesystem::exists(path.string() + ".partial"))
      fail(ErrorKind::Corrupt, path.string() + " was never finalized (only a .partial file exists)");
    fail(ErrorKind::Io, "no such demo file: " + path.string());
  }
  auto raw = detail::parse_demo_text(detail::read_file(path));
  if (!raw.checksum_ok) fail(ErrorKind::Corrupt, "demo checksum mismatch in " + path.string());
  return std::move(raw.demo);
}

inline DemoSummary summarize(const DemoFile& demo) {
  DemoSummary s;
  double total = 0.0, running = 0.0;
  for (const auto& r : demo.records) {
    ++s.records;
    running += r.reward;
    if (r.reward == reward::kMiss) ++s.misses;
    // Reloading steps carry reward 0 and only exist in the high tier.
    if (r.reward == reward::kReloading && demo.header.env.tier == Tier::High) ++s.reloads;
    for (Species sp : kAllSpecies)
      if (r.done && r.reward == hit_reward(sp)) ++s.hits[static_cast<std::size_t>(sp)];
    if (r.done) {
      ++s.episodes;
      total += running;
      running = 0.0;
    }
  }
  s.mean_reward = s.episodes ? total / static_cast<double>(s.episodes) : 0.0;
  return s;
}

/// Checks a demo file against an environment config. Returns at most
/// `limit` human-readable violations; empty means the file is valid.
inline std::vector<std::string> validate_demo(const std::filesystem::path& path, const EnvConfig& cfg,
                                              std::size_t limit = 10) {
  std::vector<std::string> out;
  auto add = [&](std::string msg) {
    if (out.size() < limit) out.push_back(std::move(msg));
  };
  detail::RawDemo raw;
  try {
    if (!std::filesystem::exists(path) && std::filesystem::exists(path.string() + ".partial")) {
      add("unfinalized recording: only " + path.string() + ".partial exists");
      return out;
    }
    raw = detail::parse_demo_text(detail::read_file(path));
  } catch (const Error& e) {
    add(std::string(to_string(e.kind())) + ": " + e.what());
    return out;
  }
  const auto& h = raw.demo.header;
  if (!raw.checksum_ok) add("checksum mismatch: body does not match header checksum");
  if (h.env.width != cfg.width || h.env.height != cfg.height || h.env.channels != cfg.channels)
    add("incompatible dimensions: demo is " + std::to_string(h.env.width) + "x" + std::to_string(h.env.height) + "x" +
        std::to_string(h.env.channels) + ", config is " + std::to_string(cfg.width) + "x" +
        std::to_string(cfg.height) + "x" + std::to_string(cfg.channels));
  if (h.env.tier != cfg.tier)
    add(std::string("incompatible tier: demo is ") + to_string(h.env.tier) + ", config is " + to_string(cfg.tier));
  {
    const auto a = to_json(h.env), b = to_json(cfg);
    std::string keys;
    for (auto it = a.begin(); it != a.end(); ++it) {
      const std::string& k = it.key();
      if (k == "width" || k == "height" || k == "channels" || k == "tier") continue;
      if (!b.contains(k) || b.at(k) != it.value()) keys += (keys.empty() ? "" : ", ") + k;
    }
    if (!keys.empty()) add("env parameters differ from config: " + keys);
  }
  std::int64_t dones = 0, tail = 0;
  for (std::size_t n = 0; n < raw.demo.records.size(); ++n) {
    const auto& r = raw.demo.records[n];
    const std::string where = "record " + std::to_string(n) + ": ";
    if (r.index != static_cast<std::int64_t>(n)) add(where + "index " + std::to_string(r.index) + " out of sequence");
    if (r.action.x < 0 || r.action.x >= h.env.width || r.action.y < 0 || r.action.y >= h.env.height ||
        r.action.x >= cfg.width || r.action.y >= cfg.height)
      add(where + "action (" + std::to_string(r.action.x) + "," + std::to_string(r.action.y) + ") out of range for " +
          std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
    if (!is_legal_reward(h.env.tier, r.reward)) add(where + "reward " + nlohmann::json(r.reward).dump() + " not legal for tier");
    if (r.obs && r.obs->size() != h.env.observation_size()) add(where + "observation has wrong length");
    if (h.observations && !r.obs) add(where + "missing observation");
    if (r.done) {
      ++dones;
      tail = 0;
    } else {
      ++tail;
    }
  }
  if (static_cast<std::int64_t>(raw.demo.records.size()) != h.records)
    add("header declares " + std::to_string(h.records) + " records, body has " + std::to_string(raw.demo.records.size()));
  if (dones != h.episodes)
    add("header declares " + std::to_string(h.episodes) + " episodes, body has " + std::to_string(dones));
  if (tail != h.open_tail) add("unterminated final episode of " + std::to_string(tail) + " records not declared in header");
  return out;
}

/// Replays the stored actions through a fresh env seeded from the header and
/// returns the index of the first record whose reward, done flag or stored
/// observation differs; nullopt when the replay is exact.
inline std::optional<std::int64_t> verify_replay(const DemoFile& demo) {
  BirdHunterEnv env(demo.header.env, demo.header.seed);
  Observation obs = env.observe();
  for (const auto& r : demo.records) {
    if (r.obs && *r.obs != obs) return r.index;
    const auto res = env.step(r.action);
    if (res.reward != r.reward || res.done != r.done) return r.index;
    obs = res.done ? env.reset() : res.observation;
  }
  return std::nullopt;
}

/// Per-record observations, regenerated by replay when the file is actions-only.
inline std::vector<Observation> demo_observations(const DemoFile& demo) {
  std::vector<Observation> out;
  out.reserve(demo.records.size());
  BirdHunterEnv env(demo.header.env, demo.header.seed);
  Observation obs = env.observe();
  for (const auto& r : demo.records) {
    out.push_back(r.obs ? *r.obs : obs);
    const auto res = env.step(r.action);
    obs = res.done ? env.reset() : res.observation;
  }
  return out;
}

/// Runs the scripted oracle for `episodes` episodes and writes a finalized demo.
inline DemoHeader record_oracle(const std::filesystem::path& path, const EnvConfig& cfg, double epsilon,
                                std::int64_t episodes, std::uint64_t seed, bool observations = true,
                                std::string tag = {}) {
  if (episodes < 0) fail(ErrorKind::InvalidArgument, "episode count must be >= 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail(ErrorKind::InvalidArgument, "oracle epsilon must lie in [0,1]");
  if (tag.empty()) {
    std::ostringstream ss;
    ss << "oracle-eps" << epsilon;
    tag = ss.str();
  }
  BirdHunterEnv env(cfg, seed);
  Rng aim_rng(derive_seed(seed, 0x0AC1E));
  DemoWriter writer(path, cfg, seed, tag, observations);
  Observation obs = env.observe();
  for (std::int64_t done_count = 0; done_count < episodes;) {
    const ActionPair a = oracle_policy(env.state(), cfg, epsilon, aim_rng);
    const auto res = env.step(a);
    writer.append(cfg, obs, a, res.reward, res.done);
    if (res.done) {
      ++done_count;
      obs = env.reset();
    } else {
      obs = res.observation;
    }
  }
  return writer.close();
}

/// (observation, action) pairs for supervised and adversarial imitation.
struct DemoDataset {
  std::size_t obs_size = 0;
  std::vector<float> obs;  // row-major, one observation per row
  std::vector<ActionPair> actions;

  std::size_t size() const { return actions.size(); }
  std::span<const float> observation(std::size_t i) const { return {obs.data() + i * obs_size, obs_size}; }
};

inline DemoDataset make_dataset(const std::vector<DemoFile>& demos, const EnvConfig& cfg) {
  DemoDataset ds;
  ds.obs_size = cfg.observation_size();
  for (const auto& d : demos) {
    const auto& e = d.header.env;
    if (e.width != cfg.width || e.height != cfg.height || e.channels != cfg.channels || e.tier != cfg.tier)
      fail(ErrorKind::Incompatible, "demo recorded for a different environment shape or tier");
    const auto observations = demo_observations(d);
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const auto& a = d.records[i].action;
      if (a.x < 0 || a.x >= cfg.width || a.y < 0 || a.y >= cfg.height)
        fail(ErrorKind::InvalidArgument, "demo action out of range");
      ds.obs.insert(ds.obs.end(), observations[i].begin(), observations[i].end());
      ds.actions.push_back(a);
    }
  }
  return ds;
}

}  // namespace birdhunt
