#include "sacx/replay/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sacx::replay {

void validate(const Trajectory& traj, const ReplayConfig& cfg) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("trajectory " + std::to_string(traj.episode_id) + ": " + what);
  };
  if (traj.steps.empty()) fail("no steps");
  if (traj.steps.size() > cfg.max_trajectory_length)
    fail(std::to_string(traj.steps.size()) + " steps exceeds limit " + std::to_string(cfg.max_trajectory_length));
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& t = traj.steps[i];
    const std::string at = "step " + std::to_string(i) + ": ";
    if (t.rewards.size() != cfg.task_count)
      fail(at + "reward vector has " + std::to_string(t.rewards.size()) + " entries, expected " +
           std::to_string(cfg.task_count));
    if (!std::isfinite(t.behavior_log_prob)) fail(at + "behavior log-probability is not finite");
    if (t.action.size() != env::kActionDim) fail(at + "action has wrong dimension");
    if (t.executed_task < 0 || t.executed_task >= cfg.task_count) fail(at + "executed task out of range");
    if (t.terminal && i + 1 != traj.steps.size()) fail(at + "terminal flag before the last step");
    if (t.use_count != 0) fail(at + "use count must start at zero");
  }
  if (!std::is_sorted(traj.segment_starts.begin(), traj.segment_starts.end()) ||
      (!traj.segment_starts.empty() && traj.segment_starts.back() >= traj.steps.size()))
    fail("segment boundaries out of order or out of range");
}

ReplayBuffer::ReplayBuffer(ReplayConfig cfg) : cfg_(cfg) {
  if (cfg_.capacity == 0 || cfg_.max_use == 0 || cfg_.task_count <= 0)
    throw std::invalid_argument("replay capacity, max use and task count must be positive");
}

void ReplayBuffer::append(Trajectory traj) {
  validate(traj, cfg_);
  std::lock_guard lock(mutex_);
  transitions_ += traj.steps.size();
  entries_.push_back(Entry{std::move(traj), {}});
  evict_to_capacity();
}

void ReplayBuffer::evict_to_capacity() {
  while (transitions_ > cfg_.capacity && !entries_.empty()) {
    transitions_ -= entries_.front().traj.steps.size();
    entries_.pop_front();
  }
}

std::size_t ReplayBuffer::window_count(const Entry& e, std::size_t length) const {
  const std::size_t n = e.traj.steps.size();
  if (length == 0 || n < length) return 0;
  std::size_t count = 0;
  std::size_t run_start = 0;  // first index after the previous exhausted one
  auto close_run = [&](std::size_t run_end) {
    if (run_end >= run_start + length) count += run_end - run_start - length + 1;
  };
  for (std::size_t x : e.exhausted) {
    close_run(x);
    run_start = x + 1;
  }
  close_run(n);
  return count;
}

std::size_t ReplayBuffer::nth_window(const Entry& e, std::size_t length, std::size_t n) const {
  const std::size_t size = e.traj.steps.size();
  std::size_t run_start = 0;
  auto in_run = [&](std::size_t run_end, std::size_t& idx) -> bool {
    if (run_end >= run_start + length) {
      const std::size_t windows = run_end - run_start - length + 1;
      if (idx < windows) return true;
      idx -= windows;
    }
    return false;
  };
  for (std::size_t x : e.exhausted) {
    if (in_run(x, n)) return run_start + n;
    run_start = x + 1;
  }
  if (in_run(size, n)) return run_start + n;
  throw std::logic_error("window index out of range");
}

void ReplayBuffer::drop_dead(std::size_t length) {
  for (auto it = entries_.begin(); it != entries_.end();) {
    const bool spent = it->exhausted.size() == it->traj.steps.size();
    if (spent || (it->traj.steps.size() >= length && window_count(*it, length) == 0)) {
      transitions_ -= it->traj.steps.size();
      it = entries_.erase(it);
      ++dropped_;
    } else {
      ++it;
    }
  }
}

std::optional<std::vector<Snippet>> ReplayBuffer::sample_snippets(std::size_t batch, std::size_t length,
                                                                  std::mt19937_64& rng) {
  if (length == 0) throw std::invalid_argument("snippet length must be positive");
  std::lock_guard lock(mutex_);
  std::vector<std::size_t> counts(entries_.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) total += counts[i] = window_count(entries_[i], length);
  if (total == 0) return std::nullopt;

  std::vector<Snippet> out;
  out.reserve(batch);
  bool retired = false;
  for (std::size_t b = 0; b < batch; ++b) {
    if (total == 0) break;
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    std::size_t k = 0;
    while (pick >= counts[k]) pick -= counts[k++];
    Entry& e = entries_[k];
    const std::size_t start = nth_window(e, length, pick);

    Snippet s;
    s.episode_id = e.traj.episode_id;
    s.start = start;
    s.steps.assign(e.traj.steps.begin() + start, e.traj.steps.begin() + start + length);
    s.next_observation = e.traj.next_observation(start + length - 1);
    out.push_back(std::move(s));

    bool changed = false;
    for (std::size_t i = start; i < start + length; ++i)
      if (++e.traj.steps[i].use_count == cfg_.max_use) {
        e.exhausted.insert(std::upper_bound(e.exhausted.begin(), e.exhausted.end(), i), i);
        changed = true;
      }
    if (changed) {
      total -= counts[k];
      counts[k] = window_count(e, length);
      total += counts[k];
      retired = true;
    }
  }
  if (retired) drop_dead(length);
  return out;
}

std::size_t ReplayBuffer::transition_count() const {
  std::lock_guard lock(mutex_);
  return transitions_;
}

std::size_t ReplayBuffer::trajectory_count() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t ReplayBuffer::eligible_windows(std::size_t length) const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& e : entries_) total += window_count(e, length);
  return total;
}

std::uint64_t ReplayBuffer::dropped_trajectories() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

std::vector<Trajectory> ReplayBuffer::snapshot() const {
  std::lock_guard lock(mutex_);
  std::vector<Trajectory> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.traj);
  return out;
}

// Episode log

namespace {

constexpr char kLogMagic[8] = {'S', 'A', 'C', 'X', 'E', 'P', 'L', 'G'};
constexpr std::uint32_t kLogVersion = 1;
constexpr std::uint8_t kStepRecord = 0;
constexpr std::uint8_t kEndRecord = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("episode log truncated");
  return v;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Eigen::VectorXd get_vector(std::istream& in) {
  Eigen::VectorXd v(get<std::uint32_t>(in));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw std::runtime_error("episode log truncated");
  return v;
}

void put_observation(std::ostream& out, const env::Observation& o) {
  put_vector(out, o.proprio);
  put_vector(out, o.features);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(o.pixels.size()));
  out.write(reinterpret_cast<const char*>(o.pixels.data()), static_cast<std::streamsize>(o.pixels.size()));
}

env::Observation get_observation(std::istream& in) {
  env::Observation o;
  o.proprio = get_vector(in);
  o.features = get_vector(in);
  o.pixels.resize(get<std::uint32_t>(in));
  in.read(reinterpret_cast<char*>(o.pixels.data()), static_cast<std::streamsize>(o.pixels.size()));
  if (!in) throw std::runtime_error("episode log truncated");
  return o;
}

}  // namespace

EpisodeLogWriter::EpisodeLogWriter(const std::filesystem::path& path, int task_count)
    : out_(path, std::ios::binary | std::ios::trunc), task_count_(task_count) {
  if (!out_) throw std::runtime_error("cannot open episode log " + path.string());
  out_.write(kLogMagic, sizeof(kLogMagic));
  put<std::uint32_t>(out_, kLogVersion);
  put<std::uint32_t>(out_, static_cast<std::uint32_t>(task_count_));
}

void EpisodeLogWriter::write(const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& t = traj.steps[i];
    put(out_, kStepRecord);
    put<std::uint64_t>(out_, traj.episode_id);
    put<std::uint32_t>(out_, static_cast<std::uint32_t>(i));
    put<std::int32_t>(out_, t.executed_task);
    put<std::uint8_t>(out_, t.terminal ? 1 : 0);
    put<std::uint8_t>(out_, std::binary_search(traj.segment_starts.begin(), traj.segment_starts.end(), i) ? 1 : 0);
    put<std::uint32_t>(out_, t.use_count);
    put<double>(out_, t.behavior_log_prob);
    put_vector(out_, t.action);
    put_vector(out_, t.rewards);
    put_observation(out_, t.obs);
  }
  put(out_, kEndRecord);
  put<std::uint64_t>(out_, traj.episode_id);
  put_observation(out_, traj.final_observation);
  if (!out_) throw std::runtime_error("episode log write failed");
}

std::vector<Trajectory> read_episode_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open episode log " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kLogMagic)) throw std::runtime_error(path.string() + " is not an episode log");
  const auto version = get<std::uint32_t>(in);
  if (version != kLogVersion) throw std::runtime_error("unsupported episode log version " + std::to_string(version));
  get<std::uint32_t>(in);  // task count; each record carries its own reward length

  std::vector<Trajectory> out;
  Trajectory current;
  bool open = false;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto kind = get<std::uint8_t>(in);
    const auto episode = get<std::uint64_t>(in);
    if (open && episode != current.episode_id) throw std::runtime_error("episode log interleaves episodes");
    current.episode_id = episode;
    open = true;
    if (kind == kEndRecord) {
      current.final_observation = get_observation(in);
      out.push_back(std::move(current));
      current = Trajectory{};
      open = false;
      continue;
    }
    if (kind != kStepRecord) throw std::runtime_error("corrupt episode log record");
    Transition t;
    const auto step = get<std::uint32_t>(in);
    if (step != current.steps.size()) throw std::runtime_error("episode log steps out of order");
    t.executed_task = get<std::int32_t>(in);
    t.terminal = get<std::uint8_t>(in) != 0;
    if (get<std::uint8_t>(in) != 0) current.segment_starts.push_back(step);
    t.use_count = get<std::uint32_t>(in);
    t.behavior_log_prob = get<double>(in);
    t.action = get_vector(in);
    t.rewards = get_vector(in);
    t.obs = get_observation(in);
    current.steps.push_back(std::move(t));
  }
  if (open) throw std::runtime_error("episode log ends inside a trajectory");
  return out;
}

}  // namespace sacx::replay
