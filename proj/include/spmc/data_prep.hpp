#pragma once

// Cleaning of two-round election returns into the canonical station dataset:
// round linkage with abstention padding, small-station and small-candidate
// merging, the density covariate, and dataset (de)serialisation.
//
// Station ids are "department-constituency-station".

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spmc/ei_models.hpp"

namespace spmc {

inline const std::string kAbstention = "Abstention";
inline const std::string kOther = "other";

struct RawRow {
  std::string station_id;
  std::string option;
  long votes = 0;
  long registered = 0;
};

/// Long-format returns for one round. An "Abstention" row, if present, is
/// folded into the computed abstention (registered minus votes for the
/// other options).
struct RawRound {
  std::vector<RawRow> rows;
};

/// Header station_id,option,votes,registered. Errors carry the line number.
RawRound read_round_csv(std::istream& in, const std::string& source = "round file");

struct Dataset {
  std::vector<std::string> options1;  // first-round options, Abstention last
  std::vector<std::string> options2;
  std::vector<StationData> stations;  // sorted by station_id
};

struct Rejection {
  std::string station_id;
  std::string reason;
  long registered1 = -1;  // -1 when unknown
  long registered2 = -1;
};

struct JoinResult {
  Dataset data;
  std::vector<Rejection> rejected;
};

/// Links the rounds by station id. A station is dropped when it is missing
/// from one round, when the registered counts differ by more than
/// max_registered_gap, or when every elector abstains in some round after
/// padding. Otherwise the round with fewer registered electors gets the
/// difference added to its Abstention.
JoinResult join_rounds(const RawRound& round1, const RawRound& round2, long max_registered_gap = 50);

enum class GroupKey { department, constituency };

/// "dept" or "dept-constituency" prefix of a station id.
std::string group_of(const std::string& station_id, GroupKey key);

/// Sums every station with n < threshold into one station per group, named
/// "<group>-small". The merged covariate is the n-weighted mean when all
/// parts have one.
Dataset merge_small_stations(const Dataset& data, GroupKey key, int threshold = 70);

struct OptionMerge {
  int round = 1;
  std::string from;
  std::string to;
};

struct CandidateMergeResult {
  Dataset data;
  std::vector<OptionMerge> mapping;
};

/// Per round, options other than Abstention whose share of the votes cast
/// (Abstention excluded) is below threshold_share are summed into "other".
/// Throws DataError when fewer than two options would remain.
CandidateMergeResult merge_small_candidates(const Dataset& data, double threshold_share = 0.05);

struct CorpusStats {
  double mean = 0.0;
  double sd = 0.0;
};

double clamped_log_density(double population, double area_km2);

/// Mean and sample standard deviation of the clamped log densities. Throws
/// DataError when the standard deviation is zero.
CorpusStats corpus_stats(const std::vector<std::pair<double, double>>& population_area);

/// (max(0, log(population / area)) - mean) / sd.
double covariate_density(double population, double area_km2, const CorpusStats& stats);

/// Reads station_id,population,area_km2 and sets each listed station's
/// covariate, standardized over the listed stations present in the data.
Dataset attach_covariates(const Dataset& data, std::istream& census, const std::string& source = "census file");

/// One station id per line; blank lines and lines starting with '#' skipped.
std::set<std::string> read_exclusion_list(std::istream& in);

/// Removes listed stations, logging each removal.
Dataset apply_exclusions(const Dataset& data, const std::set<std::string>& ids, std::vector<Rejection>& log);

void write_rejection_log(std::ostream& out, const std::vector<Rejection>& log);

/// Canonical CSV: station_id,n,covariate,r_1..r_I,s_1..s_J.
void emit_dataset_csv(std::ostream& out, const Dataset& data);
/// Sidecar JSON listing the option names of each round.
std::string dataset_sidecar_json(const Dataset& data);

/// Parses the canonical CSV (the covariate column may be absent). Option
/// names default to r_i / s_j unless a sidecar is supplied.
Dataset load_dataset_csv(std::istream& in, const std::string& source = "dataset");
void apply_sidecar_json(Dataset& data, const std::string& json_text);

/// File versions: the sidecar lives at <path>.json.
void emit_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// ModelSpec-independent sanity checks (both rounds sum to n, counts >= 0).
void validate_dataset(const Dataset& data);

}  // namespace spmc
