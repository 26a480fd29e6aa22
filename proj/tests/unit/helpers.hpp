#pragma once

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "stargnn/error.hpp"
#include "stargnn/graph.hpp"
#include "stargnn/ingest.hpp"

namespace testutil {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stargnn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline stargnn::Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  stargnn::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

inline stargnn::Vector random_vector(std::mt19937_64& rng, int n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, n, 1, lo, hi).col(0);
}

// Default-scale regions for `frames` frames with random nonnegative features.
inline std::vector<stargnn::RegionNode> random_regions(std::mt19937_64& rng, int frames, int channels) {
  std::vector<stargnn::RegionNode> out;
  const int per_scale[3] = {9, 4, 1};
  for (int f = 0; f < frames; ++f)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < per_scale[k]; ++j)
        out.push_back({f, k + 1, j, random_vector(rng, channels, 0.0, 1.0)});
  return out;
}

template <typename F>
stargnn::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const stargnn::Error& e) {
    return e.kind();
  }
  FAIL("expected a stargnn::Error");
  return stargnn::ErrorKind::usage;
}

}  // namespace testutil

#define CHECK_ERROR_KIND(expr, kind) CHECK(testutil::error_kind_of([&] { (void)(expr); }) == (kind))
