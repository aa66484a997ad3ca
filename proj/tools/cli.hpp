#pragma once

// The `spmc` command line: estimate, bench, fit, compare, count-tables,
// prep and synth.

#include <iosfwd>
#include <string>
#include <vector>

#include "spmc/aggregation.hpp"
#include "spmc/families.hpp"

namespace spmc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Seed used when neither --seed nor SPMC_SEED is given.
inline constexpr std::uint64_t kDefaultSeed = 1;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Law and margins read from a key=value model file:
///   family  = multinomial | bernoulli
///   n       = trials (multinomial)
///   p / q   = comma-separated cell probabilities
///   I, J    = table shape (cells stored column-major)
///   margins = table | full | identity (default: table for multinomial,
///             full for bernoulli)
/// Blank lines and '#' comments are ignored.
struct ModelFile {
  Model model;
  MarginsMap a;
};

ModelFile parse_model_file(std::istream& in, const std::string& source = "model file");

std::vector<int> parse_int_list(const std::string& text, const std::string& what);
std::vector<double> parse_double_list(const std::string& text, const std::string& what);

/// Runs one invocation; args exclude the program name. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spmc::cli
