#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace shockkit {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kSecondsPerWeek = 604800;

/// Fatal data-level problem (bad input file, violated precondition, ...).
/// The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Hashing / RNG. Everything here is self-contained and platform-stable so
// that stores, cohorts and simulations reproduce bit-for-bit from a seed.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a seed with stream tags so parallel workers get independent,
/// order-free substreams (seed, tag, index) -> substream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0);

/// Deterministic 64-bit generator (splitmix64 core). Not std::-engine backed
/// on purpose: distribution code below is fully specified by this repo.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Knuth multiplicative Poisson sampler; exact for the small rates used here.
  int poisson(double lambda);

  /// First k elements of a uniform random permutation of {0..n-1}.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

/// Accepts "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS" (optional trailing 'Z'),
/// interpreted as UTC. Plain integers are accepted as epoch seconds.
std::optional<std::int64_t> parse_time_utc(std::string_view text);

std::string format_time_utc(std::int64_t epoch_seconds);

// ---------------------------------------------------------------------------
// CSV output (RFC 4180 quoting, optional "# " provenance preamble)
// ---------------------------------------------------------------------------

std::string csv_escape(std::string_view field);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& comment_lines,
            const std::vector<std::string>& header);
  ~CsvWriter();

  void row(const std::vector<std::string>& fields);

 private:
  struct Impl;
  Impl* impl_;
};

std::string format_double(double v);

// ---------------------------------------------------------------------------
// Provenance header carried by every command output.
// ---------------------------------------------------------------------------

struct Provenance {
  std::string command_line;
  std::optional<std::uint64_t> seed;
  std::string store_checksum;

  std::vector<std::string> comment_lines() const;
};

// ---------------------------------------------------------------------------
// Parallel helper: splits [0, n) into contiguous chunks, one thread each.
// Workers must only write to disjoint, index-addressed slots.
// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t)>& fn);

int default_thread_count();

}  // namespace shockkit
