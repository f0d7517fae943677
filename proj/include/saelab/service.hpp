#pragma once

// JSON endpoints over offline artifacts (dataset, checkpoint, index) plus an
// append-only label log. Routing is transport independent; http_server.hpp
// binds it to a socket.
//
//   GET  /episodes?offset=&limit=
//   GET  /episodes/{id}/heatmap?top=50
//   GET  /features/{id}
//   POST /labels               {"feature_id", "label", "annotator"}
//   POST /classifier/fit
//   GET  /classifier/summary
//   POST /steering/export      {"feature_id", "alpha"[, "start_timestep"]}
//
// The classifier used by the GET endpoints is the fit over the current label
// map when that fit is possible, otherwise the configured preset, so every GET
// body is a function of the artifacts and the label log alone.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "saelab/activation_store.hpp"
#include "saelab/classifier.hpp"
#include "saelab/error.hpp"
#include "saelab/metrics.hpp"
#include "saelab/sae.hpp"
#include "saelab/search_index.hpp"
#include "saelab/steering.hpp"

namespace saelab {

using json = nlohmann::json;

struct LabelRecord {
  std::size_t feature_id = 0;
  GeneralityLabel label = GeneralityLabel::General;
  std::string annotator;
  std::int64_t timestamp = 0;  // milliseconds since the epoch

  bool operator==(const LabelRecord&) const = default;
};

inline json to_json(const LabelRecord& r) {
  return {{"feature_id", r.feature_id},
          {"label", std::string(to_string(r.label))},
          {"annotator", r.annotator},
          {"timestamp", r.timestamp}};
}

inline LabelRecord label_record_from_json(const json& j) {
  LabelRecord r;
  r.feature_id = j.at("feature_id").get<std::size_t>();
  if (!parse_label(j.at("label").get<std::string>(), r.label)) {
    fail(ErrorCode::FormatError, "unknown label '" + j.at("label").get<std::string>() + "'");
  }
  r.annotator = j.at("annotator").get<std::string>();
  r.timestamp = j.value("timestamp", std::int64_t{0});
  return r;
}

// JSON-lines log; the current map is the last record per feature. A partial
// final line (an interrupted append) is dropped on replay.
class LabelStore {
 public:
  LabelStore() = default;

  explicit LabelStore(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // no log yet
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const bool last = in.peek() == std::char_traits<char>::eof();
      try {
        apply(label_record_from_json(json::parse(line)));
      } catch (const std::exception& e) {
        if (last && in.eof()) break;
        fail(ErrorCode::CorruptFile,
             path_ + ":" + std::to_string(line_no) + ": bad label record: " + e.what());
      }
    }
  }

  void append(const LabelRecord& r) {
    std::unique_lock lock(mutex_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      if (!out) fail(ErrorCode::IoError, "cannot open '" + path_ + "' for appending");
      out << to_json(r).dump() << '\n';
      out.flush();
      if (!out) fail(ErrorCode::IoError, "short write to '" + path_ + "'");
    }
    apply(r);
  }

  std::vector<LabelRecord> log() const {
    std::shared_lock lock(mutex_);
    return log_;
  }

  std::map<std::size_t, LabelRecord> current() const {
    std::shared_lock lock(mutex_);
    return current_;
  }

  std::optional<LabelRecord> find(std::size_t feature_id) const {
    std::shared_lock lock(mutex_);
    const auto it = current_.find(feature_id);
    if (it == current_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void apply(const LabelRecord& r) {
    log_.push_back(r);
    current_[r.feature_id] = r;
  }

  std::string path_;
  mutable std::shared_mutex mutex_;
  std::vector<LabelRecord> log_;
  std::map<std::size_t, LabelRecord> current_;
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  json body;
};

struct ServiceOptions {
  std::string label_log;      // empty keeps labels in memory
  std::string export_dir = ".";
  std::string fallback_preset = "libero";
  std::string layer_name;     // recorded in exported hook specs
  std::size_t heatmap_top = 50;
};

inline json to_json(const FeatureMetrics& m) {
  return {{"feature_id", m.feature_id},
          {"episode_coverage", m.episode_coverage},
          {"mean_onset_count", m.mean_onset_count},
          {"mean_activation_magnitude", m.mean_activation_magnitude},
          {"relative_run_length", m.relative_run_length},
          {"active_episodes", m.active_episodes},
          {"inactive", m.inactive}};
}

inline json to_json(const FeatureEvidence& f) {
  json hits = json::array();
  for (const auto& h : f.top_timesteps) {
    hits.push_back({{"episode_id", h.episode_id}, {"t", h.t}, {"activation", h.activation}});
  }
  json maxima = json::array();
  for (const auto& m : f.episode_maxima) {
    maxima.push_back({{"episode_id", m.episode_id}, {"max", m.max}});
  }
  return {{"top_timesteps", hits}, {"episode_maxima", maxima}};
}

inline json to_json(const GeneralityClassifier& clf) {
  return {{"dataset", clf.dataset}, {"beta", clf.beta}};
}

class Service {
 public:
  Service(ActivationDataset dataset, SaeModel<float> model, EvidenceIndex index,
          ServiceOptions options = {})
      : dataset_(std::move(dataset)), model_(std::move(model)), index_(std::move(index)),
        options_(std::move(options)), labels_(options_.label_log) {
    validate(dataset_);
    if (dataset_.dim != model_.dim()) {
      fail(ErrorCode::DimensionMismatch, "service: dataset and checkpoint dimensions differ");
    }
    if (index_.num_features() != model_.num_features()) {
      fail(ErrorCode::DimensionMismatch, "service: index and checkpoint feature counts differ");
    }
    preset_ = preset(options_.fallback_preset);
    metrics_ = compute_all(model_, dataset_);
    for (std::size_t e = 0; e < dataset_.episodes.size(); ++e) {
      by_id_[dataset_.episodes[e].episode_id] = e;
    }
  }

  const std::vector<FeatureMetrics>& metrics() const { return metrics_; }
  const LabelStore& labels() const { return labels_; }

  Response route(const Request& req) {
    try {
      const auto parts = split_path(req.path);
      if (req.method == "GET") {
        if (parts.size() == 1 && parts[0] == "episodes") return episodes(req);
        if (parts.size() == 3 && parts[0] == "episodes" && parts[2] == "heatmap") {
          return heatmap(parts[1], req);
        }
        if (parts.size() == 2 && parts[0] == "features") return feature(parts[1]);
        if (parts.size() == 2 && parts[0] == "classifier" && parts[1] == "summary") {
          return summary();
        }
      } else if (req.method == "POST") {
        if (parts.size() == 1 && parts[0] == "labels") return post_label(req);
        if (parts.size() == 2 && parts[0] == "classifier" && parts[1] == "fit") return fit_now();
        if (parts.size() == 2 && parts[0] == "steering" && parts[1] == "export") {
          return export_steering(req);
        }
      }
      return error(404, "NotFound", "no route for " + req.method + " " + req.path);
    } catch (const Error& e) {
      return error(status_for(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const json::exception& e) {
      return error(400, "BadRequest", e.what());
    }
  }

 private:
  static Response error(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", code}, {"message", message}}};
  }

  static int status_for(ErrorCode code) {
    switch (code) {
      case ErrorCode::BadFeatureId: return 404;
      case ErrorCode::DegenerateLabels: return 409;
      case ErrorCode::FormatError:
      case ErrorCode::DimensionMismatch:
      case ErrorCode::DegenerateSample: return 422;
      default: return 500;
    }
  }

  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < path.size()) {
      const auto next = path.find('/', pos);
      const auto end = next == std::string::npos ? path.size() : next;
      if (end > pos) parts.push_back(path.substr(pos, end - pos));
      pos = end + 1;
    }
    return parts;
  }

  static std::optional<std::uint64_t> parse_id(const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || ptr != end) return std::nullopt;
    return v;
  }

  static std::size_t query_number(const Request& req, const std::string& key,
                                  std::size_t fallback) {
    const auto it = req.query.find(key);
    if (it == req.query.end()) return fallback;
    const auto v = parse_id(it->second);
    if (!v) fail(ErrorCode::FormatError, "query parameter '" + key + "' is not a number");
    return static_cast<std::size_t>(*v);
  }

  Response episodes(const Request& req) const {
    const std::size_t offset = query_number(req, "offset", 0);
    const std::size_t limit = query_number(req, "limit", dataset_.episodes.size());
    json rows = json::array();
    for (std::size_t e = offset; e < dataset_.episodes.size() && e - offset < limit; ++e) {
      const auto& ep = dataset_.episodes[e];
      rows.push_back({{"id", ep.episode_id},
                      {"task_text", ep.task_text},
                      {"T", ep.num_timesteps},
                      {"scene_tag", ep.scene_tag ? json(*ep.scene_tag) : json(nullptr)}});
    }
    return {200, rows};
  }

  Response heatmap(const std::string& id_text, const Request& req) const {
    const auto id = parse_id(id_text);
    const auto it = id ? by_id_.find(*id) : by_id_.end();
    if (it == by_id_.end()) return error(404, "NotFound", "unknown episode '" + id_text + "'");
    const auto& ep = dataset_.episodes[it->second];
    const std::size_t top = query_number(req, "top", options_.heatmap_top);

    const Mat<float> z = encode_episode(model_, ep);
    std::vector<std::pair<float, std::size_t>> order;
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      order.emplace_back(z.row(j).maxCoeff(), static_cast<std::size_t>(j));
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    if (order.size() > top) order.resize(top);

    json rows = json::array();
    for (const auto& [peak, j] : order) {
      std::vector<float> series(static_cast<std::size_t>(z.cols()));
      for (Eigen::Index t = 0; t < z.cols(); ++t) {
        series[static_cast<std::size_t>(t)] = z(static_cast<Eigen::Index>(j), t);
      }
      rows.push_back({{"feature_id", j}, {"max", peak}, {"activations", series}});
    }
    return {200,
            {{"episode_id", ep.episode_id},
             {"T", ep.num_timesteps},
             {"frame_refs", ep.frame_refs},
             {"features", rows}}};
  }

  Response feature(const std::string& id_text) {
    const auto id = parse_id(id_text);
    if (!id || *id >= metrics_.size()) {
      return error(404, "NotFound", "unknown feature '" + id_text + "'");
    }
    const auto j = static_cast<std::size_t>(*id);
    const auto& m = metrics_[j];
    const auto clf = active_classifier();

    json diverse = json::array();
    for (const auto& e : top_diverse_episodes(index_, j)) {
      diverse.push_back({{"episode_id", e.episode_id}, {"max", e.max}});
    }
    const DropOff drop = drop_off_ratio(index_, j);
    json evidence = to_json(index_.feature(j));
    evidence["top_diverse_episodes"] = diverse;
    evidence["drop_off"] = {{"ratio", std::isfinite(drop.ratio) ? json(drop.ratio) : json(nullptr)},
                            {"single_episode", drop.single_episode},
                            {"inactive", drop.inactive}};

    const auto label = labels_.find(j);
    return {200,
            {{"feature_id", j},
             {"metrics", to_json(m)},
             {"evidence", evidence},
             {"label", label ? to_json(*label) : json(nullptr)},
             {"probability", predict(clf.first, m)},
             {"predicted_label", std::string(to_string(label_for(clf.first, m)))},
             {"classifier_source", clf.second}}};
  }

  Response post_label(const Request& req) {
    const json body = json::parse(req.body);
    if (!body.is_object() || !body.contains("feature_id") || !body.contains("label") ||
        !body.contains("annotator") || !body["feature_id"].is_number_unsigned() ||
        !body["label"].is_string() || !body["annotator"].is_string()) {
      return error(422, "InvalidLabel", "expected {feature_id, label, annotator}");
    }
    LabelRecord r;
    r.feature_id = body["feature_id"].get<std::size_t>();
    if (r.feature_id >= metrics_.size()) {
      return error(422, "InvalidLabel", "feature_id out of range");
    }
    if (!parse_label(body["label"].get<std::string>(), r.label)) {
      return error(422, "InvalidLabel", "label must be 'general' or 'memorized'");
    }
    r.annotator = body["annotator"].get<std::string>();
    r.timestamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
    {
      std::lock_guard lock(fit_mutex_);
      labels_.append(r);
      cached_.reset();
    }
    return {200, to_json(r)};
  }

  std::vector<LabeledFeature> labeled_snapshot() const {
    std::vector<LabeledFeature> out;
    for (const auto& [id, r] : labels_.current()) {
      out.push_back({id, metrics_[id], r.label, r.annotator, r.timestamp});
    }
    return out;
  }

  Response fit_now() {
    const auto labeled = labeled_snapshot();
    if (labeled.size() < 2) {
      return error(409, "DegenerateLabels", "need at least two labeled features");
    }
    const auto clf = fit(labeled);
    json loo;
    try {
      loo = loo_cv(labeled);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateLabels) throw;
      loo = nullptr;  // some fold lost a class
    }
    return {200,
            {{"classifier", to_json(clf)}, {"loo_accuracy", loo}, {"labels", labeled.size()}}};
  }

  Response summary() {
    const auto clf = active_classifier();
    const auto s = classify_all(clf.first, metrics_);
    const auto current = labels_.current();
    json rows = json::array();
    for (const auto& f : s.features) {
      const auto it = current.find(f.feature_id);
      rows.push_back({{"feature_id", f.feature_id},
                      {"probability", f.probability},
                      {"label", std::string(to_string(f.label))},
                      {"inactive", f.inactive},
                      {"manual_label", it == current.end()
                                           ? json(nullptr)
                                           : json(std::string(to_string(it->second.label)))}});
    }
    return {200,
            {{"classifier", to_json(clf.first)},
             {"classifier_source", clf.second},
             {"percent_memorized", s.percent_memorized},
             {"labeled", current.size()},
             {"features", rows}}};
  }

  Response export_steering(const Request& req) {
    const json body = json::parse(req.body);
    if (!body.is_object() || !body.contains("feature_id") || !body.contains("alpha") ||
        !body["feature_id"].is_number_unsigned() || !body["alpha"].is_number()) {
      return error(422, "InvalidRequest", "expected {feature_id, alpha}");
    }
    const auto id = body["feature_id"].get<std::size_t>();
    SteeringVector sv =
        steering_vector(model_, id, body["alpha"].get<double>(), options_.layer_name);
    sv.start_timestep = body.value("start_timestep", kDefaultSteeringStart);
    const auto path = (std::filesystem::path(options_.export_dir) /
                       ("steer_f" + std::to_string(id) + "_a" + format_number(sv.alpha) + ".hook"))
                          .string();
    export_hook_spec(sv, path);
    return {200, {{"path", path}}};
  }

  // Fit over the current label map, or the preset when that is impossible.
  std::pair<GeneralityClassifier, std::string> active_classifier() {
    std::lock_guard lock(fit_mutex_);
    if (!cached_) {
      const auto labeled = labeled_snapshot();
      try {
        cached_ = {fit(labeled), "fit"};
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateLabels) throw;
        cached_ = {preset_, "preset"};
      }
    }
    return *cached_;
  }

  ActivationDataset dataset_;
  SaeModel<float> model_;
  EvidenceIndex index_;
  ServiceOptions options_;
  LabelStore labels_;
  GeneralityClassifier preset_;
  std::vector<FeatureMetrics> metrics_;
  std::map<std::uint64_t, std::size_t> by_id_;
  std::mutex fit_mutex_;
  std::optional<std::pair<GeneralityClassifier, std::string>> cached_;
};

}  // namespace saelab
