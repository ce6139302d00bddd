#include "xseg/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace xseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<CaseDescriptor> list_cases(const fs::path& data_dir) {
  std::vector<CaseDescriptor> out;
  std::error_code ec;
  if (!fs::is_directory(data_dir, ec)) throw DataError("data directory " + data_dir.string() + " does not exist");
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    const fs::path& p = entry.path();
    if (!entry.is_regular_file() || p.extension() != ".json") continue;
    const std::string id = p.stem().string();
    if (id.empty() || id.front() == '.') continue;
    try {
      const VolumeHeader h = read_header(p);
      if (h.dtype != "f32") continue;
      out.push_back({id, h.dims, h.spacing});
    } catch (const DataError&) {
      continue;  // points files and other non-volume JSON
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

SliceImage extract_slice(const Volume& v, char axis, int index) {
  const Dims d = v.dims();
  int a;
  switch (axis) {
    case 'x': a = 0; break;
    case 'y': a = 1; break;
    case 'z': a = 2; break;
    default: throw DataError(std::string("axis must be x, y or z, got '") + axis + "'");
  }
  if (index < 0 || index >= d[a]) throw std::out_of_range("slice index out of range");

  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  SliceImage s;
  s.window_min = *lo;
  s.window_max = *hi;
  const double range = static_cast<double>(s.window_max) - s.window_min;
  auto pixel = [&](int x, int y, int z) -> std::uint8_t {
    if (range <= 0.0) return 0;
    const double t = (static_cast<double>(v(x, y, z)) - s.window_min) / range;
    return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  };

  if (a == 2) {
    s.width = d.nx;
    s.height = d.ny;
  } else if (a == 1) {
    s.width = d.nx;
    s.height = d.nz;
  } else {
    s.width = d.ny;
    s.height = d.nz;
  }
  s.pixels.resize(static_cast<std::size_t>(s.width) * s.height);
  std::size_t i = 0;
  for (int row = 0; row < s.height; ++row)
    for (int col = 0; col < s.width; ++col, ++i) {
      if (a == 2) s.pixels[i] = pixel(col, row, index);
      else if (a == 1) s.pixels[i] = pixel(col, index, row);
      else s.pixels[i] = pixel(index, col, row);
    }
  return s;
}

std::vector<SliceRuns> encode_overlay(const Mask& m) {
  const Dims d = m.dims();
  const int plane = d.nx * d.ny;
  std::vector<SliceRuns> out(d.nz);
  for (int z = 0; z < d.nz; ++z) {
    const std::uint8_t* slice = m.data().data() + static_cast<std::size_t>(z) * plane;
    int i = 0;
    while (i < plane) {
      if (!slice[i]) {
        ++i;
        continue;
      }
      const int start = i;
      while (i < plane && slice[i]) ++i;
      out[z].emplace_back(start, i - start);
    }
  }
  return out;
}

Mask decode_overlay(const std::vector<SliceRuns>& runs, const Dims& dims, const Spacing& spacing) {
  if (static_cast<int>(runs.size()) != dims.nz) throw DataError("overlay slice count does not match dims");
  Mask m(dims, spacing, std::uint8_t{0});
  const int plane = dims.nx * dims.ny;
  for (int z = 0; z < dims.nz; ++z) {
    for (auto [start, len] : runs[z]) {
      if (start < 0 || len < 0 || start + len > plane) throw DataError("overlay run exceeds its slice");
      std::fill_n(m.data().begin() + static_cast<std::ptrdiff_t>(z) * plane + start, len, std::uint8_t{1});
    }
  }
  return m;
}

namespace {

struct JobFailure {
  int status;
  std::string message;
};

struct JobResult {
  std::uint64_t job_id = 0;
  std::string mode;
  ProbabilityMap probability;
  Mask mask;
  std::optional<double> dice_prev;
  json rounds = json::array();
  bool converged = false;
};

bool valid_case_id(const std::string& id) {
  static const std::regex pattern("[A-Za-z0-9_][A-Za-z0-9_.-]*");
  return std::regex_match(id, pattern) && id.find("..") == std::string::npos;
}

json partial_points_json(const PartialPointSet& p) {
  json obj = json::object();
  for (int s = 0; s < 6; ++s)
    if (p.points[s]) obj[kSlotNames[s]] = {p.points[s]->x, p.points[s]->y, p.points[s]->z};
  return obj;
}

json missing_slots(const PartialPointSet& p) {
  json out = json::array();
  for (int s = 0; s < 6; ++s)
    if (!p.points[s]) out.push_back(kSlotNames[s]);
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

void write_atomically(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

struct AnnotationService::Session {
  std::string id;
  std::mutex mutex;
  std::condition_variable idle;
  PartialPointSet points;
  std::uint64_t jobs_started = 0;
  bool running = false;
  std::uint64_t running_job = 0;
  std::optional<JobResult> result;
  std::optional<JobFailure> failure;
  std::thread worker;
};

AnnotationService::AnnotationService(fs::path data_dir, PipelineConfig cfg)
    : data_dir_(std::move(data_dir)), cfg_(cfg) {
  cfg_.validate();
  if (!fs::is_directory(data_dir_)) throw DataError("data directory " + data_dir_.string() + " does not exist");
  fs::create_directories(data_dir_ / ".sessions");
}

AnnotationService::~AnnotationService() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard<std::mutex> lock(registry_mutex_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all)
    if (s->worker.joinable()) s->worker.join();
}

std::shared_ptr<const Volume> AnnotationService::volume(const std::string& case_id) {
  std::lock_guard<std::mutex> lock(registry_mutex_);
  if (auto it = volumes_.find(case_id); it != volumes_.end()) return it->second;
  if (!valid_case_id(case_id)) throw std::out_of_range("unknown case \"" + case_id + "\"");
  const fs::path header = data_dir_ / (case_id + ".json");
  if (!fs::is_regular_file(header)) throw std::out_of_range("unknown case \"" + case_id + "\"");
  if (read_header(header).dtype != "f32") throw std::out_of_range("\"" + case_id + "\" is not an f32 volume");
  auto v = std::make_shared<const Volume>(load_volume(header));
  volumes_.emplace(case_id, v);
  return v;
}

std::shared_ptr<AnnotationService::Session> AnnotationService::session(const std::string& case_id) {
  const auto vol = volume(case_id);
  std::lock_guard<std::mutex> lock(registry_mutex_);
  if (auto it = sessions_.find(case_id); it != sessions_.end()) return it->second;
  auto s = std::make_shared<Session>();
  s->id = case_id;

  const fs::path file = data_dir_ / ".sessions" / (case_id + ".json");
  if (fs::is_regular_file(file)) {
    std::ifstream in(file);
    json j;
    try {
      in >> j;
      s->points = parse_points_json(json{{"points", j.at("points")}}.dump());
      s->jobs_started = j.at("jobs_started").get<std::uint64_t>();
      const json& r = j.at("result");
      if (!r.is_null()) {
        JobResult res;
        res.job_id = r.at("job_id").get<std::uint64_t>();
        res.mode = r.at("mode").get<std::string>();
        if (!r.at("dice_prev").is_null()) res.dice_prev = r.at("dice_prev").get<double>();
        res.rounds = r.at("rounds");
        res.converged = r.at("converged").get<bool>();
        const Volume stored = load_volume(data_dir_ / ".sessions" / (case_id + "_probability.json"));
        res.probability = ProbabilityMap(stored.dims(), stored.spacing(),
                                         std::vector<float>(stored.data().begin(), stored.data().end()));
        res.mask = threshold(res.probability, 0.5);
        if (res.mask.dims() == vol->dims()) s->result = std::move(res);
      }
    } catch (const std::exception&) {
      s = std::make_shared<Session>();  // unreadable session file: start fresh
      s->id = case_id;
    }
  }
  sessions_.emplace(case_id, s);
  return s;
}

void AnnotationService::persist(const Session& s) const {
  json j = {{"case", s.id}, {"points", partial_points_json(s.points)}, {"jobs_started", s.jobs_started}};
  if (s.result) {
    const JobResult& r = *s.result;
    j["result"] = {{"job_id", r.job_id},
                   {"mode", r.mode},
                   {"dice_prev", r.dice_prev ? json(*r.dice_prev) : json(nullptr)},
                   {"rounds", r.rounds},
                   {"converged", r.converged}};
    save_probability(r.probability, data_dir_ / ".sessions" / (s.id + "_probability.json"));
  } else {
    j["result"] = nullptr;
  }
  write_atomically(data_dir_ / ".sessions" / (s.id + ".json"), j.dump(2));
}

void AnnotationService::wait(const std::string& case_id) {
  auto s = session(case_id);
  std::unique_lock<std::mutex> lock(s->mutex);
  s->idle.wait(lock, [&] { return !s->running; });
}

void AnnotationService::run_job(std::shared_ptr<Session> s, std::uint64_t job_id, bool full, ExtremePointSet pts) {
  std::optional<JobResult> done;
  std::optional<JobFailure> failure;
  try {
    const auto image = volume(s->id);
    std::optional<Mask> gt;
    const fs::path gt_header = data_dir_ / (s->id + "_gt.json");
    if (fs::is_regular_file(gt_header)) {
      Mask m = load_mask(gt_header);
      if (m.dims() == image->dims()) gt = std::move(m);
    }

    JobResult r;
    r.job_id = job_id;
    r.mode = full ? "full" : "init";
    if (full) {
      RunResult run = run_pipeline({SegmentationCase{s->id, *image, pts, gt}}, cfg_);
      r.probability = std::move(run.probabilities.front());
      r.converged = run.converged;
      for (const auto& rec : run.rounds) r.rounds.push_back(json::parse(rec.to_json()));
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      const CroppedLabel label = initial_pseudo_label(*image, pts, cfg_);
      r.probability = uncrop(label.label, label.box, image->dims());
      RoundRecord rec;
      rec.round = 0;
      if (gt) rec.mean_dice_gt = dice_score(threshold(r.probability, 0.5), *gt);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.rounds.push_back(json::parse(rec.to_json()));
    }
    r.mask = threshold(r.probability, 0.5);
    done = std::move(r);
  } catch (const DataError& e) {
    failure = JobFailure{422, e.what()};
  } catch (const std::exception& e) {
    failure = JobFailure{500, e.what()};
  }

  {
    std::lock_guard<std::mutex> lock(s->mutex);
    if (done) {
      if (s->result) done->dice_prev = dice_score(done->mask, s->result->mask);
      s->result = std::move(done);
      s->failure.reset();
    } else {
      s->failure = std::move(failure);
    }
    try {
      persist(*s);
    } catch (const std::exception& e) {
      s->failure = JobFailure{500, std::string("session not saved: ") + e.what()};
    }
    s->running = false;
  }
  s->idle.notify_all();
}

void AnnotationService::mount(httplib::Server& server) {
  // Resolves the case or answers 404 itself.
  auto find_session = [this](const httplib::Request& req, httplib::Response& res) -> std::shared_ptr<Session> {
    try {
      return session(req.matches[1]);
    } catch (const std::out_of_range& e) {
      send_error(res, 404, e.what());
    }
    return nullptr;
  };

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}});
  });

  server.Get("/cases", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& c : list_cases(data_dir_))
      out.push_back({{"id", c.id}, {"dims", {c.dims.nx, c.dims.ny, c.dims.nz}}, {"spacing_mm", c.spacing}});
    send_json(res, 200, out);
  });

  server.Get(R"(/cases/([^/]+)/slice)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<const Volume> v;
    try {
      v = volume(req.matches[1]);
    } catch (const std::out_of_range& e) {
      return send_error(res, 404, e.what());
    }
    const std::string axis = req.get_param_value("axis");
    const std::string index_text = req.get_param_value("index");
    if (axis.size() != 1) return send_error(res, 400, "axis must be x, y or z");
    int index = 0;
    try {
      std::size_t used = 0;
      index = std::stoi(index_text, &used);
      if (used != index_text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      return send_error(res, 400, "index must be an integer");
    }
    try {
      const SliceImage s = extract_slice(*v, axis[0], index);
      res.status = 200;
      res.set_header("X-Slice-Width", std::to_string(s.width));
      res.set_header("X-Slice-Height", std::to_string(s.height));
      std::ostringstream lo, hi;
      lo.precision(9);
      hi.precision(9);
      lo << s.window_min;
      hi << s.window_max;
      res.set_header("X-Window-Min", lo.str());
      res.set_header("X-Window-Max", hi.str());
      res.set_content(std::string(s.pixels.begin(), s.pixels.end()), "application/octet-stream");
    } catch (const DataError& e) {
      send_error(res, 400, e.what());
    } catch (const std::out_of_range& e) {
      send_error(res, 404, e.what());
    }
  });

  server.Post(R"(/cases/([^/]+)/points)", [this, find_session](const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req, res);
    if (!s) return;
    PartialPointSet pts;
    try {
      pts = parse_points_json(req.body);
    } catch (const DataError& e) {
      return send_error(res, 400, e.what());
    }
    if (auto bad = pts.violation(volume(s->id)->dims())) return send_error(res, 422, *bad);
    std::lock_guard<std::mutex> lock(s->mutex);
    s->points = pts;
    persist(*s);
    send_json(res, 200,
              json{{"case", s->id},
                   {"state", pts.complete() ? "ready" : "incomplete"},
                   {"points", partial_points_json(pts)},
                   {"missing", missing_slots(pts)}});
  });

  server.Post(R"(/cases/([^/]+)/segment)", [this, find_session](const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req, res);
    if (!s) return;
    const std::string mode = req.get_param_value("mode");
    if (mode != "init" && mode != "full") return send_error(res, 400, "mode must be init or full");
    std::lock_guard<std::mutex> lock(s->mutex);
    if (s->running) return send_error(res, 409, "a job is already running for this case");
    if (!s->points.complete()) return send_error(res, 409, "points incomplete; six extreme points are required");
    if (s->worker.joinable()) s->worker.join();
    const std::uint64_t job_id = ++s->jobs_started;
    s->running = true;
    s->running_job = job_id;
    s->worker = std::thread(&AnnotationService::run_job, this, s, job_id, mode == "full", s->points.to_complete());
    send_json(res, 202, json{{"case", s->id}, {"job_id", job_id}, {"mode", mode}, {"state", "running"}});
  });

  server.Get(R"(/cases/([^/]+)/result)", [find_session](const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req, res);
    if (!s) return;
    std::lock_guard<std::mutex> lock(s->mutex);
    if (s->running) return send_json(res, 202, json{{"job_id", s->running_job}, {"state", "running"}});
    if (s->failure) {
      return send_json(res, s->failure->status,
                       json{{"error", s->failure->message}, {"job_id", s->jobs_started}, {"state", "failed"}});
    }
    if (!s->result) return send_error(res, 404, "no segmentation has been run for this case");
    const JobResult& r = *s->result;
    json runs = json::array();
    for (const auto& slice : encode_overlay(r.mask)) {
      json row = json::array();
      for (auto [start, len] : slice) row.push_back({start, len});
      runs.push_back(std::move(row));
    }
    const Dims d = r.mask.dims();
    send_json(res, 200,
              json{{"case", s->id},
                   {"job_id", r.job_id},
                   {"mode", r.mode},
                   {"state", "done"},
                   {"dims", {d.nx, d.ny, d.nz}},
                   {"foreground_voxels", count_foreground(r.mask)},
                   {"dice_prev", r.dice_prev ? json(*r.dice_prev) : json(nullptr)},
                   {"converged", r.converged},
                   {"rounds", r.rounds},
                   {"overlay", {{"axis", "z"}, {"encoding", "rle"}, {"runs", std::move(runs)}}}});
  });

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not found" : "request failed");
  });

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const DataError& e) {
      send_error(res, 422, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });
}

}  // namespace xseg
