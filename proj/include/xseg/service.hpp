#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "xseg/pipeline.hpp"

namespace httplib {
class Server;
}

namespace xseg {

/// A listable case: an f32 volume sidecar `<id>.json` in the data directory.
struct CaseDescriptor {
  std::string id;
  Dims dims;
  Spacing spacing;
};

std::vector<CaseDescriptor> list_cases(const std::filesystem::path& data_dir);

/// 8-bit slice windowed by the volume-global [min, max].
struct SliceImage {
  int width = 0;   ///< x for axis z and y; y for axis x
  int height = 0;  ///< y for axis z; z for axis y and x
  float window_min = 0.0f;
  float window_max = 0.0f;
  std::vector<std::uint8_t> pixels;  ///< row-major, width-fastest
};

/// Throws DataError on an unknown axis; std::out_of_range on a bad index.
SliceImage extract_slice(const Volume& v, char axis, int index);

/// Per z-slice [start, length] runs of foreground over the slice's
/// x-fastest linear index.
using SliceRuns = std::vector<std::pair<int, int>>;
std::vector<SliceRuns> encode_overlay(const Mask& m);
Mask decode_overlay(const std::vector<SliceRuns>& runs, const Dims& dims, const Spacing& spacing);

/// Per-case annotation state behind the REST API. Sessions persist under
/// `<data_dir>/.sessions/`. One job per case at a time, each on its own thread.
class AnnotationService {
 public:
  AnnotationService(std::filesystem::path data_dir, PipelineConfig cfg);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Registers every route, plus JSON 404/500 handlers, on `server`.
  void mount(httplib::Server& server);

  /// Blocks until no job of the case is running.
  void wait(const std::string& case_id);

 private:
  struct Session;
  std::shared_ptr<Session> session(const std::string& case_id);
  std::shared_ptr<const Volume> volume(const std::string& case_id);
  void run_job(std::shared_ptr<Session> s, std::uint64_t job_id, bool full, ExtremePointSet pts);
  void persist(const Session& s) const;

  std::filesystem::path data_dir_;
  PipelineConfig cfg_;
  std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const Volume>> volumes_;
};

}  // namespace xseg
