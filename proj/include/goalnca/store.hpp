#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "goalnca/error.hpp"
#include "goalnca/loss.hpp"
#include "goalnca/params.hpp"
#include "goalnca/tasks.hpp"
#include "goalnca/trainer.hpp"

namespace goalnca {

inline constexpr char kCheckpointMagic[4] = {'G', 'N', 'C', 'A'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

class checkpoint_error : public error {
 public:
  enum class kind { io, bad_magic, version_mismatch, truncated, malformed, shape_mismatch };

  checkpoint_error(kind k, const std::string& what) : error(what), kind_(k) {}
  kind which() const noexcept { return kind_; }

 private:
  kind kind_;
};

struct CheckpointMeta {
  Task task = Task::locomotion;
  int channels = 0;
  int n_hidden = 0;
  int n_goals = 0;
  EncoderKind encoder = EncoderKind::embedding;
  long long iteration = 0;
  std::uint64_t seed = 0;
  int grid_size = 0;
  std::vector<std::string> goal_names;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct OptimizerSnapshot {
  AdamState<NcaParams<float>> nca;
  AdamState<GoalEncoder<float>> encoder;

  friend bool operator==(const OptimizerSnapshot&, const OptimizerSnapshot&) = default;
};

/// Everything needed to resume evaluation of a trained model. `targets`
/// holds the training images (one per goal for morphing, the base image for
/// locomotion) so evaluation does not need the data directory.
struct Checkpoint {
  CheckpointMeta meta;
  NcaParams<float> nca;
  GoalEncoder<float> encoder;
  std::vector<RgbaImage> targets;
  std::optional<OptimizerSnapshot> optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline Checkpoint make_checkpoint(const Trainer& tr, bool with_optimizer = false,
                                  std::vector<std::string> goal_names = {}) {
  const auto& cfg = tr.config();
  Checkpoint ck;
  ck.meta.task = cfg.task;
  ck.meta.channels = cfg.channels();
  ck.meta.n_hidden = cfg.n_hidden;
  ck.meta.n_goals = tr.learner().encoder.n_goals;
  ck.meta.encoder = tr.learner().encoder.kind;
  ck.meta.iteration = tr.iteration();
  ck.meta.seed = cfg.seed;
  ck.meta.grid_size = cfg.grid_size;
  if (goal_names.empty() && cfg.task == Task::locomotion) {
    for (auto n : kDirectionNames) goal_names.emplace_back(n);
  }
  ck.meta.goal_names = std::move(goal_names);
  ck.nca = tr.learner().nca;
  ck.encoder = tr.learner().encoder;
  ck.targets = tr.targets();
  if (with_optimizer) ck.optimizer = OptimizerSnapshot{tr.learner().nca_opt, tr.learner().enc_opt};
  return ck;
}

/// Throws a shape-mismatch error when a checkpoint cannot serve a run with
/// `channels` cell channels.
inline void expect_channels(const Checkpoint& ck, int channels) {
  if (ck.meta.channels != channels) {
    throw checkpoint_error(checkpoint_error::kind::shape_mismatch,
                           "checkpoint has C=" + std::to_string(ck.meta.channels) +
                               " but the run requests C=" + std::to_string(channels));
  }
}

namespace detail {

struct BlobDecl {
  std::string name;
  std::vector<int> shape;

  std::size_t count() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class Num>
Num parse_number(std::string_view s, std::string_view what) {
  Num v{};
  s = trim(s);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw config_error("bad value '" + std::string(s) + "' for " + std::string(what));
  }
  return v;
}

inline double parse_double(std::string_view s, std::string_view what) {
  s = trim(s);
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size()) {
    throw config_error("bad value '" + tmp + "' for " + std::string(what));
  }
  return v;
}

/// Each blob is a named float array; collected in write order.
struct BlobList {
  std::vector<BlobDecl> decls;
  std::vector<std::span<const float>> data;

  void add(std::string name, std::vector<int> shape, std::span<const float> values) {
    decls.push_back({std::move(name), std::move(shape)});
    data.push_back(values);
  }
  template <class P>
  void add_all(const std::string& prefix, const P& p) {
    for (const auto& a : p.arrays()) add(prefix + std::string(a.name), a.shape, a.values);
  }
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  using detail::format_double;
  detail::BlobList blobs;
  blobs.add_all("", ck.nca);
  blobs.add_all("", ck.encoder);
  for (std::size_t i = 0; i < ck.targets.size(); ++i) {
    const auto& t = ck.targets[i];
    blobs.add("target." + std::to_string(i), {t.channels, t.height, t.width}, t.data);
  }
  if (ck.optimizer) {
    blobs.add_all("adam.nca.m.", ck.optimizer->nca.m);
    blobs.add_all("adam.nca.v.", ck.optimizer->nca.v);
    blobs.add_all("adam.enc.m.", ck.optimizer->encoder.m);
    blobs.add_all("adam.enc.v.", ck.optimizer->encoder.v);
  }

  std::ostringstream meta;
  meta << "task = " << to_string(ck.meta.task) << '\n'
       << "channels = " << ck.meta.channels << '\n'
       << "n_hidden = " << ck.meta.n_hidden << '\n'
       << "n_goals = " << ck.meta.n_goals << '\n'
       << "encoder = " << to_string(ck.meta.encoder) << '\n'
       << "iteration = " << ck.meta.iteration << '\n'
       << "seed = " << ck.meta.seed << '\n'
       << "grid_size = " << ck.meta.grid_size << '\n'
       << "goal_names = " << detail::join(ck.meta.goal_names, ',') << '\n';
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    meta << "adam.nca = " << o.nca.t << ' ' << format_double(o.nca.lr) << ' '
         << format_double(o.nca.beta1) << ' ' << format_double(o.nca.beta2) << ' '
         << format_double(o.nca.eps) << '\n'
         << "adam.enc = " << o.encoder.t << ' ' << format_double(o.encoder.lr) << ' '
         << format_double(o.encoder.beta1) << ' ' << format_double(o.encoder.beta2) << ' '
         << format_double(o.encoder.eps) << '\n';
  }
  for (const auto& d : blobs.decls) {
    meta << "array " << d.name << " =";
    for (int s : d.shape) meta << ' ' << s;
    meta << '\n';
  }
  const std::string text = meta.str();

  std::vector<char> bytes;
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  bytes.push_back(static_cast<char>(kCheckpointVersion));
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  bytes.insert(bytes.end(), text.begin(), text.end());
  for (const auto& blob : blobs.data) {
    for (float f : blob) {
      const auto u = std::bit_cast<std::uint32_t>(f);
      for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw checkpoint_error(checkpoint_error::kind::io, "cannot write checkpoint " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw checkpoint_error(checkpoint_error::kind::io, "failed writing checkpoint " + path.string());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using K = checkpoint_error::kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error(K::io, "cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();

  if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
    throw checkpoint_error(K::bad_magic, "not a checkpoint (bad magic)" + where);
  }
  if (bytes.size() < 9) throw checkpoint_error(K::truncated, "truncated header" + where);
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kCheckpointVersion) {
    throw checkpoint_error(K::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                    ", expected " + std::to_string(kCheckpointVersion) + where);
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[5 + i])) << (8 * i);
  if (bytes.size() < 9 + static_cast<std::size_t>(len)) {
    throw checkpoint_error(K::truncated, "truncated metadata" + where);
  }
  const std::string text(bytes.begin() + 9, bytes.begin() + 9 + len);

  std::map<std::string, std::string, std::less<>> kv;
  std::vector<detail::BlobDecl> decls;
  try {
    for (const auto& raw : detail::split(text, '\n')) {
      const auto line = detail::trim(raw);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw config_error("metadata line without '='");
      const auto key = detail::trim(line.substr(0, eq));
      const auto value = detail::trim(line.substr(eq + 1));
      if (key.starts_with("array ")) {
        detail::BlobDecl d;
        d.name = std::string(detail::trim(key.substr(6)));
        for (const auto& tok : detail::split(value, ' ')) {
          if (tok.empty()) continue;
          const int s = detail::parse_number<int>(tok, d.name);
          if (s < 0) throw config_error("negative dimension for " + d.name);
          d.shape.push_back(s);
        }
        decls.push_back(std::move(d));
      } else {
        kv[std::string(key)] = std::string(value);
      }
    }
  } catch (const config_error& e) {
    throw checkpoint_error(K::malformed, std::string("malformed metadata: ") + e.what() + where);
  }

  auto get = [&](std::string_view k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw checkpoint_error(K::malformed, "metadata lacks '" + std::string(k) + "'" + where);
    return it->second;
  };

  Checkpoint ck;
  try {
    ck.meta.task = task_from_string(get("task"));
    ck.meta.channels = detail::parse_number<int>(get("channels"), "channels");
    ck.meta.n_hidden = detail::parse_number<int>(get("n_hidden"), "n_hidden");
    ck.meta.n_goals = detail::parse_number<int>(get("n_goals"), "n_goals");
    ck.meta.encoder = encoder_kind_from_string(get("encoder"));
    ck.meta.iteration = detail::parse_number<long long>(get("iteration"), "iteration");
    ck.meta.seed = detail::parse_number<std::uint64_t>(get("seed"), "seed");
    ck.meta.grid_size = detail::parse_number<int>(get("grid_size"), "grid_size");
    ck.meta.goal_names = detail::split(get("goal_names"), ',');
  } catch (const config_error& e) {
    throw checkpoint_error(K::malformed, std::string(e.what()) + where);
  }
  if (ck.meta.channels != kRgbaChannels + ck.meta.n_hidden || ck.meta.n_hidden < 1 || ck.meta.n_goals < 1) {
    throw checkpoint_error(K::shape_mismatch, "inconsistent channel counts C=" +
                                                  std::to_string(ck.meta.channels) + ", n_hidden=" +
                                                  std::to_string(ck.meta.n_hidden) + where);
  }

  // Size check before touching any blob, so a truncated file yields nothing.
  std::size_t need = 0;
  for (const auto& d : decls) need += d.count() * 4;
  const std::size_t have = bytes.size() - 9 - len;
  if (have < need) {
    throw checkpoint_error(K::truncated, "checkpoint truncated: " + std::to_string(have) +
                                             " blob bytes, header declares " + std::to_string(need) + where);
  }
  if (have > need) {
    throw checkpoint_error(K::malformed, "trailing bytes after declared blobs" + where);
  }

  std::map<std::string, std::pair<const detail::BlobDecl*, std::size_t>, std::less<>> offsets;
  std::size_t off = 9 + len;
  for (const auto& d : decls) {
    offsets[d.name] = {&d, off};
    off += d.count() * 4;
  }
  auto read_blob = [&](const std::string& name, std::span<float> dst, const std::vector<int>& shape) {
    auto it = offsets.find(name);
    if (it == offsets.end()) throw checkpoint_error(K::malformed, "missing array " + name + where);
    const auto& [decl, pos] = it->second;
    if (decl->shape != shape) {
      std::string want, got;
      for (int s : shape) want += " " + std::to_string(s);
      for (int s : decl->shape) got += " " + std::to_string(s);
      throw checkpoint_error(K::shape_mismatch, "array " + name + " has shape" + got +
                                                    ", expected" + want + where);
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i * 4 + b])) << (8 * b);
      }
      dst[i] = std::bit_cast<float>(u);
    }
  };
  auto read_all = [&](const std::string& prefix, auto& p) {
    for (auto& a : p.arrays()) read_blob(prefix + std::string(a.name), a.values, a.shape);
  };

  ck.nca = NcaParams<float>::zeros(ck.meta.channels);
  ck.encoder = GoalEncoder<float>::zeros(ck.meta.encoder, ck.meta.n_goals, ck.meta.n_hidden);
  read_all("", ck.nca);
  read_all("", ck.encoder);
  for (int i = 0;; ++i) {
    auto it = offsets.find("target." + std::to_string(i));
    if (it == offsets.end()) break;
    const auto& shape = it->second.first->shape;
    if (shape.size() != 3 || shape[0] != kRgbaChannels) {
      throw checkpoint_error(K::shape_mismatch, "target blob must be 4 x H x W" + where);
    }
    RgbaImage img(shape[0], shape[1], shape[2]);
    read_blob(it->first, img.data, shape);
    ck.targets.push_back(std::move(img));
  }
  if (kv.contains("adam.nca")) {
    OptimizerSnapshot o;
    auto parse_adam = [&](std::string_view key, auto& st) {
      const auto parts = detail::split(get(key), ' ');
      if (parts.size() != 5) throw checkpoint_error(K::malformed, "bad optimizer line " + std::string(key) + where);
      try {
        st.t = detail::parse_number<long long>(parts[0], key);
        st.lr = detail::parse_double(parts[1], key);
        st.beta1 = detail::parse_double(parts[2], key);
        st.beta2 = detail::parse_double(parts[3], key);
        st.eps = detail::parse_double(parts[4], key);
      } catch (const config_error& e) {
        throw checkpoint_error(K::malformed, std::string(e.what()) + where);
      }
    };
    parse_adam("adam.nca", o.nca);
    parse_adam("adam.enc", o.encoder);
    o.nca.m = o.nca.v = NcaParams<float>::zeros(ck.meta.channels);
    o.encoder.m = o.encoder.v = GoalEncoder<float>::zeros(ck.meta.encoder, ck.meta.n_goals, ck.meta.n_hidden);
    read_all("adam.nca.m.", o.nca.m);
    read_all("adam.nca.v.", o.nca.v);
    read_all("adam.enc.m.", o.encoder.m);
    read_all("adam.enc.v.", o.encoder.v);
    ck.optimizer = std::move(o);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  TrainConfig train;
  std::string data_dir = "data/emoji";
  std::string out_dir;
  int log_every = 10;
  int checkpoint_every = 500;
  std::vector<std::string> targets;  // image stems, in goal order
  int content_size = 0;              // resize targets to this before centering; 0 keeps size

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"morphing", "locomotion", "morphing-desk",
                                                 "locomotion-desk"};
  return names;
}

inline std::optional<RunConfig> named_preset(std::string_view name) {
  RunConfig rc;
  auto& t = rc.train;
  if (name == "morphing" || name == "morphing-desk") {
    t.task = Task::morphing;
    t.fire_rate = 0.5;
    t.batch_size = 8;
    t.pool_size = 1024;
    t.n_hidden = 16;
    t.min_steps = 48;
    t.max_steps = 96;
    t.segments = 2;
    t.encoder = EncoderKind::mlp3;
    t.grid_size = 64;
    t.total_iterations = 100000;
    rc.targets = {"butterfly", "christmas_tree", "collision", "eye", "grinning",
                  "lady_beetle", "lizard", "pretzel", "spider_web", "tropical_fish"};
    if (name == "morphing-desk") {
      t.grid_size = 32;
      t.n_hidden = 8;
      t.total_iterations = 3000;
      t.pool_size = 256;
      t.lr_decay_at = 2000;
      rc.targets = {"grinning", "lizard"};
      rc.content_size = 24;
    }
    return rc;
  }
  if (name == "locomotion" || name == "locomotion-desk") {
    t.task = Task::locomotion;
    t.fire_rate = 1.0;
    t.batch_size = 24;
    t.pool_size = 256;
    t.n_hidden = 32;
    t.min_steps = 32;
    t.max_steps = 96;
    t.segments = 4;
    t.encoder = EncoderKind::embedding;
    t.encoder_init_scale = 0.01;
    t.grid_size = 64;
    t.total_iterations = 100000;
    rc.targets = {"lizard"};
    rc.content_size = 32;
    if (name == "locomotion-desk") {
      t.grid_size = 32;
      t.n_hidden = 12;
      t.batch_size = 8;
      t.min_steps = 24;
      t.max_steps = 48;
      t.total_iterations = 3000;
      rc.content_size = 16;
    }
    return rc;
  }
  return std::nullopt;
}

/// Applies one `key = value` setting. Keys mirror TrainConfig and RunConfig
/// field names.
inline void apply_setting(RunConfig& rc, std::string_view key, std::string_view value) {
  using detail::parse_double;
  using detail::parse_number;
  auto& t = rc.train;
  const std::string k(key);
  if (k == "task") t.task = task_from_string(value);
  else if (k == "batch_size") t.batch_size = parse_number<int>(value, k);
  else if (k == "pool_size") t.pool_size = parse_number<int>(value, k);
  else if (k == "min_steps") t.min_steps = parse_number<int>(value, k);
  else if (k == "max_steps") t.max_steps = parse_number<int>(value, k);
  else if (k == "segments") t.segments = parse_number<int>(value, k);
  else if (k == "fire_rate") t.fire_rate = parse_double(value, k);
  else if (k == "goal_rate") t.goal_rate = parse_double(value, k);
  else if (k == "n_seed_replacements") t.n_seed_replacements = parse_number<int>(value, k);
  else if (k == "total_iterations") t.total_iterations = parse_number<int>(value, k);
  else if (k == "seed") t.seed = parse_number<std::uint64_t>(value, k);
  else if (k == "grid_size") t.grid_size = parse_number<int>(value, k);
  else if (k == "n_hidden") t.n_hidden = parse_number<int>(value, k);
  else if (k == "encoder") t.encoder = encoder_kind_from_string(value);
  else if (k == "encoder_init_scale") t.encoder_init_scale = parse_double(value, k);
  else if (k == "lr") t.lr = parse_double(value, k);
  else if (k == "lr_decay_at") t.lr_decay_at = parse_number<int>(value, k);
  else if (k == "lr_decay_factor") t.lr_decay_factor = parse_double(value, k);
  else if (k == "border_margin") t.border_margin = parse_number<int>(value, k);
  else if (k == "threads") t.threads = parse_number<int>(value, k);
  else if (k == "data_dir") rc.data_dir = std::string(value);
  else if (k == "out_dir") rc.out_dir = std::string(value);
  else if (k == "log_every") rc.log_every = parse_number<int>(value, k);
  else if (k == "checkpoint_every") rc.checkpoint_every = parse_number<int>(value, k);
  else if (k == "targets") rc.targets = detail::split(value, ',');
  else if (k == "content_size") rc.content_size = parse_number<int>(value, k);
  else throw config_error("unknown config key '" + k + "'");
}

/// Parses a config file. A leading `preset = <name>` line selects the base;
/// otherwise defaults start from TrainConfig{}.
inline RunConfig parse_config(std::string_view text, const std::string& origin = "config") {
  RunConfig rc;
  int line_no = 0;
  for (const auto& raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = detail::trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string loc = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw config_error(loc + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        auto p = named_preset(value);
        if (!p) throw config_error("unknown preset '" + std::string(value) + "'");
        rc = *p;
      } else {
        apply_setting(rc, key, value);
      }
    } catch (const config_error& e) {
      throw config_error(loc + ": " + e.what());
    }
  }
  rc.train.validate();
  return rc;
}

inline std::string format_config(const RunConfig& rc) {
  const auto& t = rc.train;
  std::ostringstream os;
  os << "task = " << to_string(t.task) << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "pool_size = " << t.pool_size << '\n'
     << "min_steps = " << t.min_steps << '\n'
     << "max_steps = " << t.max_steps << '\n'
     << "segments = " << t.segments << '\n'
     << "fire_rate = " << detail::format_double(t.fire_rate) << '\n'
     << "goal_rate = " << detail::format_double(t.goal_rate) << '\n'
     << "n_seed_replacements = " << t.n_seed_replacements << '\n'
     << "total_iterations = " << t.total_iterations << '\n'
     << "seed = " << t.seed << '\n'
     << "grid_size = " << t.grid_size << '\n'
     << "n_hidden = " << t.n_hidden << '\n'
     << "encoder = " << to_string(t.encoder) << '\n'
     << "encoder_init_scale = " << detail::format_double(t.encoder_init_scale) << '\n'
     << "lr = " << detail::format_double(t.lr) << '\n'
     << "lr_decay_at = " << t.lr_decay_at << '\n'
     << "lr_decay_factor = " << detail::format_double(t.lr_decay_factor) << '\n'
     << "border_margin = " << t.border_margin << '\n'
     << "threads = " << t.threads << '\n'
     << "data_dir = " << rc.data_dir << '\n';
  if (!rc.out_dir.empty()) os << "out_dir = " << rc.out_dir << '\n';
  os << "log_every = " << rc.log_every << '\n'
     << "checkpoint_every = " << rc.checkpoint_every << '\n'
     << "targets = " << detail::join(rc.targets, ',') << '\n'
     << "content_size = " << rc.content_size << '\n';
  return os.str();
}

/// Named preset, or a config file path.
inline RunConfig preset(std::string_view name_or_path) {
  if (auto p = named_preset(name_or_path)) return *p;
  const std::filesystem::path path{std::string(name_or_path)};
  if (std::filesystem::is_regular_file(path)) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
  }
  throw config_error("unknown preset '" + std::string(name_or_path) + "'; valid presets: " +
                     detail::join(preset_names(), ',') + " or a config file path");
}

/// Loads the targets named by a run configuration at its grid size.
inline std::vector<RgbaImage> load_run_targets(const RunConfig& rc) {
  DatasetOptions opt;
  opt.canvas = rc.train.grid_size;
  opt.content = rc.content_size;
  opt.names = rc.targets;
  auto ds = load_emoji_dataset(rc.data_dir, opt);
  return std::move(ds.images);
}

}  // namespace goalnca
