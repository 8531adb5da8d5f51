#pragma once

#include "citerec/corpus.hpp"
#include "citerec/textprep.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace citerec::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("citerec_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Random vectors for `words`, seeded.
inline std::shared_ptr<const Vocabulary> random_vocab(const std::vector<std::string>& words, std::size_t dim,
                                                      std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Matrix m(static_cast<nn::Index>(words.size()), static_cast<nn::Index>(dim));
  for (nn::Index i = 0; i < m.rows(); ++i) {
    for (nn::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
  }
  return std::make_shared<const Vocabulary>(words, m);
}

inline PaperRecord paper(std::string id, std::string title, std::string abstract, std::string date = "2010-01") {
  return PaperRecord{std::move(id), std::move(title), std::move(abstract), YearMonth::parse(date)};
}

inline Query query(std::string local, std::string cited = "", std::string citing = "", std::string title = "",
                   std::string abstract = "") {
  return Query{"q", std::move(citing), std::move(cited), std::move(local), std::move(title), std::move(abstract)};
}

}  // namespace citerec::testing
