#include "sacx/orchestrator/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sacx::orchestrator {

using gated::FilterVector;
using gated::TaskSpec;

std::string to_string(RunMode m) { return m == RunMode::concurrent ? "concurrent" : "deterministic"; }

ConfigError::ConfigError(const std::string& source, int line, int column, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

namespace {

bool same_env(const env::BallInCupConfig& a, const env::BallInCupConfig& b) {
  return a.string_length == b.string_length && a.ball_diameter == b.ball_diameter && a.cup_diameter == b.cup_diameter &&
         a.cup_height == b.cup_height && a.gravity == b.gravity && a.control_dt == b.control_dt &&
         a.substeps == b.substeps && a.filter_cutoff_hz == b.filter_cutoff_hz && a.max_velocity == b.max_velocity &&
         a.workspace_min == b.workspace_min && a.workspace_max == b.workspace_max &&
         a.start_position == b.start_position && a.reset_perturbation == b.reset_perturbation &&
         a.near_max_margin == b.near_max_margin && a.opening_scale == b.opening_scale &&
         a.swing_sigma == b.swing_sigma && a.velocity_penalty == b.velocity_penalty &&
         a.render_size == b.render_size && a.frame_stack == b.frame_stack && a.camera_center == b.camera_center &&
         a.camera_span == b.camera_span && a.frame_dump_dir == b.frame_dump_dir;
}

std::vector<TaskSpec> named(const std::vector<std::string>& names) {
  std::vector<TaskSpec> out;
  for (const auto& n : names) out.push_back(gated::parse_task_name(n, static_cast<int>(out.size())));
  return out;
}

/// Walks one YAML mapping, remembers which keys were read and rejects the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string source, std::string path)
      : node_(node), source_(std::move(source)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, path_.empty() ? "top level must be a mapping" : "'" + path_ + "' must be a mapping");
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& what) const {
    const auto m = at.Mark();
    throw ConfigError(source_, m.line + 1, m.column + 1, what);
  }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& map = node_;
    return map[key];
  }

  template <class T>
  void read(const std::string& key, T& out) {
    YAML::Node n = get(key);
    if (!n) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, "'" + qualified(key) + "' has the wrong type");
    }
  }

  void read_vec2(const std::string& key, env::Vec2& out) {
    std::vector<double> v{out.x(), out.y()};
    read(key, v);
    if (v.size() != 2) fail(get(key), "'" + qualified(key) + "' needs two numbers");
    out = env::Vec2(v[0], v[1]);
  }

  Section child(const std::string& key) { return Section(get(key), source_, qualified(key)); }

  void reject_unknown() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!seen_.count(k)) fail(kv.first, "unknown key '" + qualified(k) + "'");
    }
  }

  const YAML::Node& node() const { return node_; }
  const std::string& source() const { return source_; }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  YAML::Node node_;
  std::string source_;
  std::string path_;
  std::set<std::string> seen_;
};

FilterVector parse_filter(Section& owner, const YAML::Node& n, const std::string& what) {
  if (!n.IsSequence()) owner.fail(n, what + " must be a list of state groups");
  FilterVector f;
  for (const auto& g : n) {
    try {
      f[gated::parse_state_group(g.as<std::string>())] = true;
    } catch (const std::exception& e) {
      owner.fail(g, what + ": " + e.what());
    }
  }
  return f;
}

std::vector<TaskSpec> parse_tasks(Section& top, const YAML::Node& list) {
  if (!list.IsSequence()) top.fail(list, "'tasks' must be a list");
  std::vector<TaskSpec> out;
  for (const auto& item : list) {
    const int id = static_cast<int>(out.size());
    TaskSpec t;
    if (item.IsScalar()) {
      try {
        t = gated::parse_task_name(item.as<std::string>(), id);
      } catch (const std::exception& e) {
        top.fail(item, e.what());
      }
    } else {
      Section s(item, top.source(), "tasks[" + std::to_string(id) + "]");
      t.task_id = id;
      if (auto n = s.get("name")) {
        try {
          t = gated::parse_task_name(n.as<std::string>(), id);
        } catch (const std::exception& e) {
          s.fail(n, e.what());
        }
      }
      s.read("reward", t.reward_id);
      if (auto n = s.get("policy")) t.policy_filter = parse_filter(s, n, "policy filter");
      if (auto n = s.get("critic")) t.critic_filter = parse_filter(s, n, "critic filter");
      else if (s.get("policy")) t.critic_filter = t.policy_filter;
      s.reject_unknown();
    }
    try {
      t.validate();
    } catch (const std::exception& e) {
      top.fail(item, e.what());
    }
    out.push_back(t);
  }
  return out;
}

ExperimentConfig parse_node(const YAML::Node& root, const std::string& source) {
  ExperimentConfig cfg;
  Section top(root, source, "");

  top.read("arm", cfg.arm);
  if (std::find(kArms.begin(), kArms.end(), cfg.arm) == kArms.end()) top.fail(top.get("arm"), "unknown arm '" + cfg.arm + "'");
  if (auto n = top.get("tasks")) {
    if (cfg.arm != "custom") top.fail(n, "'tasks' is only allowed with arm 'custom'");
    cfg.tasks = parse_tasks(top, n);
  } else if (cfg.arm == "custom") {
    top.fail(root, "arm 'custom' needs a 'tasks' list");
  }
  top.read("asymmetric", cfg.asymmetric);
  top.read("episode_length", cfg.episode_length);
  top.read("switch_period", cfg.switch_period);
  top.read("control_rate_hz", cfg.control_rate_hz);
  top.read("learner_steps_per_env_step", cfg.learner_steps_per_env_step);
  top.read("episodes", cfg.episodes);
  top.read("seeds", cfg.seeds);
  top.read("output_dir", cfg.output_dir);
  std::string mode = to_string(cfg.mode);
  top.read("mode", mode);
  if (mode == "concurrent") cfg.mode = RunMode::concurrent;
  else if (mode == "deterministic") cfg.mode = RunMode::deterministic;
  else top.fail(top.get("mode"), "mode must be concurrent or deterministic");
  top.read("eval_every", cfg.eval_every);
  top.read("eval_tasks", cfg.eval_tasks);
  top.read("checkpoint_every", cfg.checkpoint_every);
  top.read("metrics_every", cfg.metrics_every);
  top.read("publish_every", cfg.publish_every);
  top.read("write_episode_log", cfg.write_episode_log);

  {
    Section s = top.child("replay");
    s.read("capacity", cfg.replay.capacity);
    s.read("max_use", cfg.replay.max_use);
    s.reject_unknown();
  }
  {
    Section s = top.child("learner");
    auto& l = cfg.learner;
    s.read("batch_size", l.batch_size);
    s.read("snippet_length", l.snippet_length);
    s.read("learning_rate", l.adam.learning_rate);
    s.read("adam_beta1", l.adam.beta1);
    s.read("adam_beta2", l.adam.beta2);
    s.read("adam_epsilon", l.adam.epsilon);
    s.read("gamma", l.retrace.gamma);
    std::string trace = learner::to_string(l.retrace.trace_mode);
    s.read("trace_mode", trace);
    try {
      l.retrace.trace_mode = learner::parse_trace_mode(trace);
    } catch (const std::exception& e) {
      s.fail(s.get("trace_mode"), e.what());
    }
    s.read("expectation_samples", l.retrace.expectation_samples);
    s.read("entropy_weight", l.retrace.entropy_weight);
    s.read("bootstrap", l.retrace.bootstrap);
    s.read("target_sync_period", cfg.target_sync_period);
    s.reject_unknown();
  }
  {
    Section s = top.child("network");
    auto& n = cfg.network;
    s.read("actor_group_width", n.actor_group_width);
    s.read("critic_group_width", n.critic_group_width);
    s.read("actor_trunk", n.actor_trunk);
    s.read("critic_trunk", n.critic_trunk);
    auto pair = [&](const std::string& key, std::array<Eigen::Index, 2>& out) {
      std::vector<Eigen::Index> v(out.begin(), out.end());
      s.read(key, v);
      if (v.size() != 2) s.fail(s.get(key), "'" + s.qualified(key) + "' needs two entries");
      out = {v[0], v[1]};
    };
    pair("conv_channels", n.conv_channels);
    pair("conv_kernels", n.conv_kernels);
    pair("conv_strides", n.conv_strides);
    s.read("min_variance", n.min_variance);
    s.read("max_variance", n.max_variance);
    s.reject_unknown();
  }
  {
    Section s = top.child("env");
    auto& e = cfg.env;
    s.read("string_length", e.string_length);
    s.read("ball_diameter", e.ball_diameter);
    s.read("cup_diameter", e.cup_diameter);
    s.read("cup_height", e.cup_height);
    s.read("gravity", e.gravity);
    s.read("control_dt", e.control_dt);
    s.read("substeps", e.substeps);
    s.read("filter_cutoff_hz", e.filter_cutoff_hz);
    s.read("max_velocity", e.max_velocity);
    s.read_vec2("workspace_min", e.workspace_min);
    s.read_vec2("workspace_max", e.workspace_max);
    s.read_vec2("start_position", e.start_position);
    s.read("reset_perturbation", e.reset_perturbation);
    s.read("near_max_margin", e.near_max_margin);
    s.read("opening_scale", e.opening_scale);
    s.read("swing_sigma", e.swing_sigma);
    s.read("velocity_penalty", e.velocity_penalty);
    s.read("render_size", e.render_size);
    s.read("frame_stack", e.frame_stack);
    s.read_vec2("camera_center", e.camera_center);
    s.read("camera_span", e.camera_span);
    s.read("frame_dump_dir", e.frame_dump_dir);
    s.reject_unknown();
  }
  top.reject_unknown();

  try {
    finalize(cfg);
  } catch (const std::invalid_argument& e) {
    const auto m = root.Mark();
    throw ConfigError(source, m.line + 1, m.column + 1, e.what());
  }
  return cfg;
}

void emit_filter(YAML::Emitter& out, const FilterVector& f) {
  out << YAML::Flow << YAML::BeginSeq;
  for (auto g : gated::kAllGroups)
    if (f[g]) out << gated::to_string(g);
  out << YAML::EndSeq;
}

void emit_vec2(YAML::Emitter& out, const char* key, const env::Vec2& v) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << v.x() << v.y() << YAML::EndSeq;
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return arm == o.arm && tasks == o.tasks && asymmetric == o.asymmetric && episode_length == o.episode_length &&
         switch_period == o.switch_period && control_rate_hz == o.control_rate_hz &&
         learner_steps_per_env_step == o.learner_steps_per_env_step && episodes == o.episodes && seeds == o.seeds &&
         output_dir == o.output_dir && mode == o.mode && eval_every == o.eval_every && eval_tasks == o.eval_tasks &&
         checkpoint_every == o.checkpoint_every && metrics_every == o.metrics_every &&
         publish_every == o.publish_every && write_episode_log == o.write_episode_log &&
         replay.capacity == o.replay.capacity && replay.max_use == o.replay.max_use &&
         replay.max_trajectory_length == o.replay.max_trajectory_length && replay.task_count == o.replay.task_count &&
         learner == o.learner && target_sync_period == o.target_sync_period && network == o.network &&
         same_env(env, o.env);
}

std::vector<TaskSpec> arm_tasks(const std::string& arm) {
  if (arm == "features_only") return named({"1F", "2F", "3F", "4F", "5F"});
  if (arm == "pixels_only") return named({"1P", "2P", "3P", "4P", "5P"});
  if (arm == "mixed" || arm == "mixed_asymmetric")
    return named({"1F", "2F", "3F", "4F", "5F", "1P", "2P", "3P", "4P", "5P"});
  if (arm == "features_distractor") return named({"1F", "2F", "3F", "4F", "5F", "8F"});
  if (arm == "shaped_asymmetric") return named({"5F", "6F", "7F", "5P", "6P", "7P"});
  throw std::invalid_argument("arm '" + arm + "' has no built-in task set");
}

void finalize(ExperimentConfig& cfg) {
  if (cfg.arm != "custom") cfg.tasks = arm_tasks(cfg.arm);
  if (cfg.arm == "mixed_asymmetric" || cfg.arm == "shaped_asymmetric") cfg.asymmetric = true;
  if (cfg.tasks.empty()) throw std::invalid_argument("task set is empty");
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    auto& t = cfg.tasks[i];
    t.task_id = static_cast<int>(i);
    if (cfg.asymmetric) t.critic_filter = FilterVector::feature_space();
    t.validate();
  }

  if (cfg.episode_length <= 0) throw std::invalid_argument("episode_length must be positive");
  if (cfg.switch_period <= 0 || cfg.episode_length % cfg.switch_period != 0)
    throw std::invalid_argument("switch_period " + std::to_string(cfg.switch_period) +
                                " must divide episode_length " + std::to_string(cfg.episode_length));
  if (std::abs(cfg.control_rate_hz * cfg.env.control_dt - 1.0) > 1e-9)
    throw std::invalid_argument("control_rate_hz must equal 1 / env.control_dt");
  if (!(cfg.learner_steps_per_env_step >= 0.0)) throw std::invalid_argument("learner_steps_per_env_step must be >= 0");
  if (cfg.episodes < 0) throw std::invalid_argument("episodes must be non-negative");
  if (cfg.seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (cfg.eval_every < 0 || cfg.checkpoint_every < 0 || cfg.metrics_every < 0 || cfg.publish_every <= 0)
    throw std::invalid_argument("eval_every, checkpoint_every and metrics_every must be >= 0, publish_every > 0");
  if (cfg.replay.capacity == 0 || cfg.replay.max_use == 0)
    throw std::invalid_argument("replay capacity and max_use must be positive");
  if (cfg.target_sync_period == 0) throw std::invalid_argument("target_sync_period must be positive");
  cfg.replay.task_count = static_cast<int>(cfg.tasks.size());
  cfg.replay.max_trajectory_length = static_cast<std::size_t>(cfg.episode_length);
  if (cfg.learner.snippet_length > static_cast<std::size_t>(cfg.episode_length))
    throw std::invalid_argument("snippet_length exceeds episode_length");
  cfg.learner.validate();
  cfg.network.validate();
  cfg.env.validate();
  evaluation_tasks(cfg);
}

std::vector<TaskSpec> evaluation_tasks(const ExperimentConfig& cfg) {
  std::vector<TaskSpec> out;
  auto find = [&](const std::string& name) -> const TaskSpec* {
    for (const auto& t : cfg.tasks)
      if (t.name() == name) return &t;
    return nullptr;
  };
  if (cfg.eval_tasks.empty()) {
    for (const char* n : {"5F", "5P"})
      if (const auto* t = find(n)) out.push_back(*t);
    return out;
  }
  for (const auto& n : cfg.eval_tasks) {
    const auto* t = find(n);
    if (!t) throw std::invalid_argument("evaluation task '" + n + "' is not in the task set");
    out.push_back(*t);
  }
  return out;
}

gated::InputShapes input_shapes(const ExperimentConfig& cfg) {
  gated::InputShapes s;
  s.proprio = env::kProprioSize;
  s.features = env::kFeatureSize;
  s.image_channels = cfg.env.frame_stack;
  s.image_height = cfg.env.render_size;
  s.image_width = cfg.env.render_size;
  s.action_dim = env::kActionDim;
  return s;
}

ExperimentConfig parse_config_string(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source, e.mark.line + 1, e.mark.column + 1, e.msg);
  }
  return parse_node(root, source);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), path.string());
}

std::string serialize(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "arm" << YAML::Value << cfg.arm;
  if (cfg.arm == "custom") {
    out << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
    for (const auto& t : cfg.tasks) {
      out << YAML::BeginMap << YAML::Key << "reward" << YAML::Value << t.reward_id;
      out << YAML::Key << "policy" << YAML::Value;
      emit_filter(out, t.policy_filter);
      out << YAML::Key << "critic" << YAML::Value;
      emit_filter(out, t.critic_filter);
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::Key << "asymmetric" << YAML::Value << cfg.asymmetric;
  out << YAML::Key << "episode_length" << YAML::Value << cfg.episode_length;
  out << YAML::Key << "switch_period" << YAML::Value << cfg.switch_period;
  out << YAML::Key << "control_rate_hz" << YAML::Value << cfg.control_rate_hz;
  out << YAML::Key << "learner_steps_per_env_step" << YAML::Value << cfg.learner_steps_per_env_step;
  out << YAML::Key << "episodes" << YAML::Value << cfg.episodes;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
  out << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir;
  out << YAML::Key << "mode" << YAML::Value << to_string(cfg.mode);
  out << YAML::Key << "eval_every" << YAML::Value << cfg.eval_every;
  out << YAML::Key << "eval_tasks" << YAML::Value << YAML::Flow << cfg.eval_tasks;
  out << YAML::Key << "checkpoint_every" << YAML::Value << cfg.checkpoint_every;
  out << YAML::Key << "metrics_every" << YAML::Value << cfg.metrics_every;
  out << YAML::Key << "publish_every" << YAML::Value << cfg.publish_every;
  out << YAML::Key << "write_episode_log" << YAML::Value << cfg.write_episode_log;

  out << YAML::Key << "replay" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "capacity" << YAML::Value << cfg.replay.capacity;
  out << YAML::Key << "max_use" << YAML::Value << cfg.replay.max_use;
  out << YAML::EndMap;

  const auto& l = cfg.learner;
  out << YAML::Key << "learner" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << l.batch_size;
  out << YAML::Key << "snippet_length" << YAML::Value << l.snippet_length;
  out << YAML::Key << "learning_rate" << YAML::Value << l.adam.learning_rate;
  out << YAML::Key << "adam_beta1" << YAML::Value << l.adam.beta1;
  out << YAML::Key << "adam_beta2" << YAML::Value << l.adam.beta2;
  out << YAML::Key << "adam_epsilon" << YAML::Value << l.adam.epsilon;
  out << YAML::Key << "gamma" << YAML::Value << l.retrace.gamma;
  out << YAML::Key << "trace_mode" << YAML::Value << learner::to_string(l.retrace.trace_mode);
  out << YAML::Key << "expectation_samples" << YAML::Value << l.retrace.expectation_samples;
  out << YAML::Key << "entropy_weight" << YAML::Value << l.retrace.entropy_weight;
  out << YAML::Key << "bootstrap" << YAML::Value << l.retrace.bootstrap;
  out << YAML::Key << "target_sync_period" << YAML::Value << cfg.target_sync_period;
  out << YAML::EndMap;

  const auto& n = cfg.network;
  auto seq = [&](const char* key, const auto& v) {
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (auto x : v) out << x;
    out << YAML::EndSeq;
  };
  out << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "actor_group_width" << YAML::Value << n.actor_group_width;
  out << YAML::Key << "critic_group_width" << YAML::Value << n.critic_group_width;
  seq("actor_trunk", n.actor_trunk);
  seq("critic_trunk", n.critic_trunk);
  seq("conv_channels", n.conv_channels);
  seq("conv_kernels", n.conv_kernels);
  seq("conv_strides", n.conv_strides);
  out << YAML::Key << "min_variance" << YAML::Value << n.min_variance;
  out << YAML::Key << "max_variance" << YAML::Value << n.max_variance;
  out << YAML::EndMap;

  const auto& e = cfg.env;
  out << YAML::Key << "env" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "string_length" << YAML::Value << e.string_length;
  out << YAML::Key << "ball_diameter" << YAML::Value << e.ball_diameter;
  out << YAML::Key << "cup_diameter" << YAML::Value << e.cup_diameter;
  out << YAML::Key << "cup_height" << YAML::Value << e.cup_height;
  out << YAML::Key << "gravity" << YAML::Value << e.gravity;
  out << YAML::Key << "control_dt" << YAML::Value << e.control_dt;
  out << YAML::Key << "substeps" << YAML::Value << e.substeps;
  out << YAML::Key << "filter_cutoff_hz" << YAML::Value << e.filter_cutoff_hz;
  out << YAML::Key << "max_velocity" << YAML::Value << e.max_velocity;
  emit_vec2(out, "workspace_min", e.workspace_min);
  emit_vec2(out, "workspace_max", e.workspace_max);
  emit_vec2(out, "start_position", e.start_position);
  out << YAML::Key << "reset_perturbation" << YAML::Value << e.reset_perturbation;
  out << YAML::Key << "near_max_margin" << YAML::Value << e.near_max_margin;
  out << YAML::Key << "opening_scale" << YAML::Value << e.opening_scale;
  out << YAML::Key << "swing_sigma" << YAML::Value << e.swing_sigma;
  out << YAML::Key << "velocity_penalty" << YAML::Value << e.velocity_penalty;
  out << YAML::Key << "render_size" << YAML::Value << e.render_size;
  out << YAML::Key << "frame_stack" << YAML::Value << e.frame_stack;
  emit_vec2(out, "camera_center", e.camera_center);
  out << YAML::Key << "camera_span" << YAML::Value << e.camera_span;
  out << YAML::Key << "frame_dump_dir" << YAML::Value << e.frame_dump_dir;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace sacx::orchestrator
