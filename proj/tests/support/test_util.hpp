#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/lexicon.hpp"

namespace biasaudit::test {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("biasaudit-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Small lexicon shared by most unit tests: two attribute pairs, one name
// pair, and two stereotype words per side.
inline Lexicon tiny_lexicon() {
  return Lexicon::from_parts({{"she", "he"}, {"woman", "man"}}, {"nurse", "dancer"},
                             {"engineer", "lawyer"}, {{"mary", "john"}});
}

// Bank whose occurrence vectors are supplied directly, bypassing any model.
inline EmbeddingBank direct_bank(
    const std::vector<std::pair<std::string, std::vector<Eigen::VectorXd>>>& entries,
    int hidden_size) {
  BankMetadata metadata;
  metadata.model_id = "direct";
  metadata.hidden_size = hidden_size;
  EmbeddingBank bank(metadata);
  std::uint64_t sentence_id = 0;
  for (const auto& [word, vectors] : entries)
    for (const Eigen::VectorXd& v : vectors) bank.add(word, {sentence_id++, 0, v});
  return bank;
}

// Gaussian cloud around a center vector.
inline std::vector<Eigen::VectorXd> noisy_cloud(const Eigen::VectorXd& center, int count,
                                                double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd v = center;
    for (Eigen::Index d = 0; d < v.size(); ++d) v[d] += noise(rng);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace biasaudit::test
