#include "fovea/oracle/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "fovea/core/rng.hpp"

namespace fovea::oracle {

namespace {

using nlohmann::json;

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

const char* speed_name(SpeedClass s) {
  switch (s) {
    case SpeedClass::kUnset: return "unset";
    case SpeedClass::kSlow: return "slow";
    case SpeedClass::kFast: return "fast";
  }
  return "?";
}

SpeedClass speed_from(const std::string& s) {
  if (s == "unset") return SpeedClass::kUnset;
  if (s == "slow") return SpeedClass::kSlow;
  if (s == "fast") return SpeedClass::kFast;
  throw std::invalid_argument("unknown speed class: " + s);
}

json events_json(const sim::EventSet& ev) {
  json out = json::array();
  if (ev.clamped) out.push_back("clamped");
  if (ev.picked) out.push_back("picked");
  if (ev.threaded) out.push_back("threaded");
  if (ev.missed) out.push_back("missed");
  if (ev.dropped) out.push_back("dropped");
  return out;
}

sim::EventSet events_from(const json& j) {
  sim::EventSet ev;
  for (const auto& name : j) {
    const std::string n = name.get<std::string>();
    if (n == "clamped") ev.clamped = true;
    else if (n == "picked") ev.picked = true;
    else if (n == "threaded") ev.threaded = true;
    else if (n == "missed") ev.missed = true;
    else if (n == "dropped") ev.dropped = true;
    else throw std::invalid_argument("unknown event name: " + n);
  }
  return ev;
}

}  // namespace

DatasetWriter::DatasetWriter(const std::string& dir, int image_w, int image_h, json extra)
    : dir_(dir) {
  if (image_w <= 0 || image_h <= 0)
    throw std::invalid_argument("dataset: image dims must be positive");
  std::filesystem::create_directories(dir_);
  meta_.image_w = image_w;
  meta_.image_h = image_h;
  meta_.extra = std::move(extra);
  manifest_.open(dir_ + "/manifest.jsonl", std::ios::binary | std::ios::trunc);
  frames_.open(dir_ + "/frames.bin", std::ios::binary | std::ios::trunc);
  if (!manifest_ || !frames_)
    throw std::runtime_error("dataset: cannot open output files under " + dir_);
}

DatasetWriter::~DatasetWriter() {
  if (!finalized_) {
    try {
      finalize();
    } catch (...) {
    }
  }
}

void DatasetWriter::add_episode(const EpisodeRecord& ep) {
  if (finalized_) throw std::logic_error("dataset: add_episode after finalize");
  const int idx = meta_.episodes;
  json head{{"type", "episode"},
            {"episode", idx},
            {"seed", ep.seed},
            {"outcome", ep.outcome == Outcome::kSuccess ? "success" : "fail"},
            {"steps", ep.steps.size()},
            {"final_eef", vec3_json(ep.final_eef)},
            {"attempts", ep.insert_attempts},
            {"misses", ep.miss_events}};
  manifest_ << head.dump() << '\n';

  const std::uint64_t frame_bytes =
      static_cast<std::uint64_t>(meta_.image_w) * meta_.image_h * 3;
  for (size_t t = 0; t < ep.steps.size(); ++t) {
    const StepRecord& st = ep.steps[t];
    if (st.obs.left.w != meta_.image_w || st.obs.left.h != meta_.image_h ||
        st.obs.right.w != meta_.image_w || st.obs.right.h != meta_.image_h)
      throw std::invalid_argument("dataset: frame dims disagree with the writer");
    const std::uint64_t off_l = frame_pos_;
    frames_.write(reinterpret_cast<const char*>(st.obs.left.px.data()),
                  static_cast<std::streamsize>(frame_bytes));
    const std::uint64_t off_r = frame_pos_ + frame_bytes;
    frames_.write(reinterpret_cast<const char*>(st.obs.right.px.data()),
                  static_cast<std::streamsize>(frame_bytes));
    frame_pos_ += 2 * frame_bytes;

    json line{{"type", "step"},
              {"episode", idx},
              {"step", t},
              {"off_l", off_l},
              {"off_r", off_r},
              {"action",
               {{"dpos", vec3_json(st.action.dpos)},
                {"dyaw", st.action.dyaw},
                {"grip", st.action.gripper_cmd == sim::GripperCmd::kClose ? "close" : "open"}}},
              {"gaze_l", json::array({st.gaze_l.x, st.gaze_l.y})},
              {"gaze_r", json::array({st.gaze_r.x, st.gaze_r.y})},
              {"phase", phase_name(st.phase)},
              {"labels",
               {{"fail", st.labels.is_failure_state},
                {"rec", st.labels.recovery_steps_remaining},
                {"speed", speed_name(st.labels.speed_class)}}},
              {"events", events_json(st.events)},
              {"eef", vec3_json(st.eef_before)}};
    manifest_ << line.dump() << '\n';
    ++meta_.steps;
  }
  ++meta_.episodes;
  if (!manifest_ || !frames_) throw std::runtime_error("dataset: write failure under " + dir_);
}

void DatasetWriter::finalize() {
  if (finalized_) return;
  finalized_ = true;
  manifest_.close();
  frames_.close();
  json meta{{"format", meta_.format},
            {"image", {{"w", meta_.image_w}, {"h", meta_.image_h}}},
            {"episodes", meta_.episodes},
            {"steps", meta_.steps},
            {"extra", meta_.extra}};
  std::ofstream out(dir_ + "/meta.json", std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw std::runtime_error("dataset: cannot write meta.json under " + dir_);
}

DatasetReader::DatasetReader(const std::string& dir) {
  std::ifstream meta_in(dir + "/meta.json", std::ios::binary);
  if (!meta_in) throw std::runtime_error("dataset: missing meta.json under " + dir);
  json meta = json::parse(meta_in);
  meta_.format = meta.at("format").get<int>();
  if (meta_.format != 1)
    throw std::runtime_error("dataset: unsupported format " + std::to_string(meta_.format));
  meta_.image_w = meta.at("image").at("w").get<int>();
  meta_.image_h = meta.at("image").at("h").get<int>();
  meta_.episodes = meta.at("episodes").get<int>();
  meta_.steps = meta.at("steps").get<long long>();
  meta_.extra = meta.at("extra");

  frames_path_ = dir + "/frames.bin";
  frames_.open(frames_path_, std::ios::binary);
  if (!frames_) throw std::runtime_error("dataset: missing frames.bin under " + dir);
  frames_size_ = std::filesystem::file_size(frames_path_);

  std::ifstream man(dir + "/manifest.jsonl", std::ios::binary);
  if (!man) throw std::runtime_error("dataset: missing manifest.jsonl under " + dir);
  episodes_.reserve(static_cast<size_t>(meta_.episodes));
  offsets_.reserve(static_cast<size_t>(meta_.episodes));
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "episode") {
      EpisodeRecord ep;
      ep.seed = j.at("seed").get<std::uint64_t>();
      ep.outcome = j.at("outcome").get<std::string>() == "success" ? Outcome::kSuccess
                                                                   : Outcome::kFail;
      ep.final_eef = vec3_from(j.at("final_eef"));
      ep.insert_attempts = j.at("attempts").get<int>();
      ep.miss_events = j.at("misses").get<int>();
      ep.steps.reserve(j.at("steps").get<size_t>());
      episodes_.push_back(std::move(ep));
      offsets_.emplace_back();
    } else if (type == "step") {
      const int e = j.at("episode").get<int>();
      if (e != static_cast<int>(episodes_.size()) - 1)
        throw std::runtime_error("dataset: manifest step out of episode order");
      StepRecord st;
      st.action.dpos = vec3_from(j.at("action").at("dpos"));
      st.action.dyaw = j.at("action").at("dyaw").get<double>();
      st.action.gripper_cmd = j.at("action").at("grip").get<std::string>() == "close"
                                  ? sim::GripperCmd::kClose
                                  : sim::GripperCmd::kOpen;
      st.gaze_l = {j.at("gaze_l").at(0).get<double>(), j.at("gaze_l").at(1).get<double>()};
      st.gaze_r = {j.at("gaze_r").at(0).get<double>(), j.at("gaze_r").at(1).get<double>()};
      st.phase = phase_from_name(j.at("phase").get<std::string>());
      st.labels.is_failure_state = j.at("labels").at("fail").get<bool>();
      st.labels.recovery_steps_remaining = j.at("labels").at("rec").get<int>();
      st.labels.speed_class = speed_from(j.at("labels").at("speed").get<std::string>());
      st.events = events_from(j.at("events"));
      st.eef_before = vec3_from(j.at("eef"));
      episodes_.back().steps.push_back(std::move(st));
      offsets_.back().emplace_back(j.at("off_l").get<std::uint64_t>(),
                                   j.at("off_r").get<std::uint64_t>());
    } else {
      throw std::runtime_error("dataset: unknown manifest line type " + type);
    }
  }
  if (static_cast<int>(episodes_.size()) != meta_.episodes)
    throw std::runtime_error("dataset: episode count disagrees with meta.json");
}

long long DatasetReader::total_steps() const { return meta_.steps; }

const EpisodeRecord& DatasetReader::episode(int i) const {
  if (i < 0 || i >= episode_count())
    throw std::out_of_range("dataset: episode index " + std::to_string(i));
  return episodes_[static_cast<size_t>(i)];
}

void DatasetReader::load_frames(int episode, int step, Image& left, Image& right) const {
  const EpisodeRecord& ep = this->episode(episode);
  if (step < 0 || step >= static_cast<int>(ep.steps.size()))
    throw std::out_of_range("dataset: step index " + std::to_string(step));
  const auto [off_l, off_r] = offsets_[static_cast<size_t>(episode)][static_cast<size_t>(step)];
  const std::uint64_t frame_bytes =
      static_cast<std::uint64_t>(meta_.image_w) * meta_.image_h * 3;
  if (off_r + frame_bytes > frames_size_)
    throw std::runtime_error("dataset: frames.bin truncated at episode " +
                             std::to_string(episode) + " step " + std::to_string(step));
  auto read_one = [&](std::uint64_t off, Image& im) {
    im = Image(meta_.image_w, meta_.image_h);
    frames_.seekg(static_cast<std::streamoff>(off));
    frames_.read(reinterpret_cast<char*>(im.px.data()), static_cast<std::streamsize>(frame_bytes));
    if (!frames_)
      throw std::runtime_error("dataset: frames.bin read failed at episode " +
                               std::to_string(episode) + " step " + std::to_string(step));
  };
  read_one(off_l, left);
  read_one(off_r, right);
}

EpisodeRecord DatasetReader::load_episode(int i) const {
  EpisodeRecord ep = episode(i);
  for (size_t t = 0; t < ep.steps.size(); ++t)
    load_frames(i, static_cast<int>(t), ep.steps[t].obs.left, ep.steps[t].obs.right);
  return ep;
}

void write_dataset(const std::vector<EpisodeRecord>& episodes, const std::string& dir,
                   int image_w, int image_h) {
  DatasetWriter w(dir, image_w, image_h);
  for (const auto& ep : episodes) w.add_episode(ep);
  w.finalize();
}

std::vector<EpisodeRecord> read_dataset(const std::string& dir) {
  DatasetReader r(dir);
  std::vector<EpisodeRecord> out;
  out.reserve(static_cast<size_t>(r.episode_count()));
  for (int i = 0; i < r.episode_count(); ++i) out.push_back(r.load_episode(i));
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_train_val(int n_episodes, double ratio,
                                                              std::uint64_t seed) {
  if (n_episodes < 0) throw std::invalid_argument("split: negative episode count");
  if (ratio < 0 || ratio > 1) throw std::invalid_argument("split: ratio must lie in [0, 1]");
  std::vector<int> idx(static_cast<size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed ^ 0x5917ull);
  for (int i = n_episodes - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
  const int n_train = static_cast<int>(std::llround(ratio * n_episodes));
  std::vector<int> train(idx.begin(), idx.begin() + n_train);
  std::vector<int> val(idx.begin() + n_train, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> split_train_val(
    const std::vector<EpisodeRecord>& episodes, double ratio, std::uint64_t seed) {
  auto [ti, vi] = split_train_val(static_cast<int>(episodes.size()), ratio, seed);
  std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> out;
  for (int i : ti) out.first.push_back(episodes[static_cast<size_t>(i)]);
  for (int i : vi) out.second.push_back(episodes[static_cast<size_t>(i)]);
  return out;
}

}  // namespace fovea::oracle
