#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

namespace testutil {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("stemscribe_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
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

 private:
  std::filesystem::path path_;
};

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed,
                                       double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> x(n);
  for (double& v : x) v = dist(rng);
  return x;
}

// Executable shell script standing in for an external tool.
inline std::filesystem::path write_script(const std::filesystem::path& path,
                                          const std::string& body) {
  std::ofstream(path) << "#!/bin/sh\n" << body << "\n";
  std::filesystem::permissions(path, std::filesystem::perms::owner_all);
  return path;
}

// Copies argument 1 to the path following "-o", like a successful export.
inline std::filesystem::path copying_stub(const std::filesystem::path& dir) {
  return write_script(dir / "mscore", "cp \"$1\" \"$3\"");
}

}  // namespace testutil
