#include "spmc/data_prep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "spmc/io.hpp"

namespace spmc {
namespace {

[[noreturn]] void fail_at(const std::string& source, long line, const std::string& msg) {
  throw DataError(source + ":" + std::to_string(line) + ": " + msg);
}

long parse_long(const std::string& s, const std::string& source, long line, const std::string& field) {
  long v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (s.empty() || ec != std::errc() || p != e) fail_at(source, line, "invalid integer in " + field + ": '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const std::string& source, long line, const std::string& field) {
  if (s.empty()) fail_at(source, line, "empty " + field);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    fail_at(source, line, "invalid number in " + field + ": '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) fail_at(source, line, "invalid number in " + field + ": '" + s + "'");
  return v;
}

void expect_header(const std::string& line, const std::vector<std::string>& want, const std::string& source) {
  if (split_csv_line(line) != want) {
    std::string w;
    for (std::size_t i = 0; i < want.size(); ++i) w += (i ? "," : "") + want[i];
    fail_at(source, 1, "expected header '" + w + "'");
  }
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

struct StationRound {
  long registered = -1;
  std::map<std::string, long> votes;  // excluding abstention
  long abstention_rows = 0;
};

std::map<std::string, StationRound> collect(const RawRound& r, int round, std::set<std::string>& options) {
  std::map<std::string, StationRound> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const RawRow& row : r.rows) {
    const std::string where = "round " + std::to_string(round) + ", station '" + row.station_id + "'";
    if (!seen.insert({row.station_id, row.option}).second) {
      throw DataError("duplicate option '" + row.option + "' for " + where);
    }
    if (row.votes < 0 || row.registered < 0) throw DataError("negative count in " + where);
    StationRound& s = out[row.station_id];
    if (s.registered >= 0 && s.registered != row.registered) {
      throw DataError("inconsistent registered count in " + where);
    }
    s.registered = row.registered;
    if (row.option == kAbstention) {
      s.abstention_rows += row.votes;
    } else {
      s.votes[row.option] += row.votes;
      options.insert(row.option);
    }
  }
  return out;
}

Counts to_counts(const StationRound& s, const std::vector<std::string>& opts, long n) {
  Counts c = Counts::Zero(static_cast<Eigen::Index>(opts.size()));
  long cast = 0;
  for (std::size_t i = 0; i + 1 < opts.size(); ++i) {
    auto it = s.votes.find(opts[i]);
    if (it != s.votes.end()) {
      c[static_cast<Eigen::Index>(i)] = static_cast<int>(it->second);
      cast += it->second;
    }
  }
  c[c.size() - 1] = static_cast<int>(n - cast);
  return c;
}

std::vector<std::string> with_abstention(const std::set<std::string>& opts) {
  std::vector<std::string> v(opts.begin(), opts.end());
  v.push_back(kAbstention);
  return v;
}

}  // namespace

RawRound read_round_csv(std::istream& in, const std::string& source) {
  RawRound out;
  std::string line;
  if (!std::getline(in, line)) fail_at(source, 1, "empty file");
  expect_header(line, {"station_id", "option", "votes", "registered"}, source);
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) fail_at(source, lineno, "expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) fail_at(source, lineno, "empty station_id");
    if (f[1].empty()) fail_at(source, lineno, "empty option");
    RawRow r;
    r.station_id = f[0];
    r.option = f[1];
    r.votes = parse_long(f[2], source, lineno, "votes");
    r.registered = parse_long(f[3], source, lineno, "registered");
    if (r.votes < 0 || r.registered < 0) fail_at(source, lineno, "negative count");
    out.rows.push_back(std::move(r));
  }
  return out;
}

JoinResult join_rounds(const RawRound& round1, const RawRound& round2, long max_registered_gap) {
  std::set<std::string> opt1, opt2;
  const auto s1 = collect(round1, 1, opt1);
  const auto s2 = collect(round2, 2, opt2);
  for (const auto& [id, s] : s1) {
    long cast = 0;
    for (const auto& [o, v] : s.votes) cast += v;
    if (cast > s.registered) throw DataError("round 1, station '" + id + "': votes exceed registered");
  }
  for (const auto& [id, s] : s2) {
    long cast = 0;
    for (const auto& [o, v] : s.votes) cast += v;
    if (cast > s.registered) throw DataError("round 2, station '" + id + "': votes exceed registered");
  }

  JoinResult out;
  out.data.options1 = with_abstention(opt1);
  out.data.options2 = with_abstention(opt2);

  std::set<std::string> ids;
  for (const auto& kv : s1) ids.insert(kv.first);
  for (const auto& kv : s2) ids.insert(kv.first);
  for (const std::string& id : ids) {
    auto a = s1.find(id);
    auto b = s2.find(id);
    if (a == s1.end()) {
      out.rejected.push_back({id, "missing from round 1", -1, b->second.registered});
      continue;
    }
    if (b == s2.end()) {
      out.rejected.push_back({id, "missing from round 2", a->second.registered, -1});
      continue;
    }
    const long r1 = a->second.registered;
    const long r2 = b->second.registered;
    if (std::labs(r1 - r2) > max_registered_gap) {
      out.rejected.push_back({id, "registered counts differ by more than " + std::to_string(max_registered_gap), r1, r2});
      continue;
    }
    const long n = std::max(r1, r2);
    StationData st;
    st.station_id = id;
    st.n = static_cast<int>(n);
    st.round1 = to_counts(a->second, out.data.options1, n);
    st.round2 = to_counts(b->second, out.data.options2, n);
    if (n == 0 || st.round1[st.round1.size() - 1] == n || st.round2[st.round2.size() - 1] == n) {
      out.rejected.push_back({id, "100% abstention", r1, r2});
      continue;
    }
    out.data.stations.push_back(std::move(st));
  }
  return out;
}

std::string group_of(const std::string& station_id, GroupKey key) {
  const auto first = station_id.find('-');
  const auto second = first == std::string::npos ? std::string::npos : station_id.find('-', first + 1);
  if (first == 0 || second == std::string::npos || second == first + 1 || second + 1 >= station_id.size()) {
    throw DataError("station id '" + station_id + "' is not of the form dept-constituency-station");
  }
  return key == GroupKey::department ? station_id.substr(0, first) : station_id.substr(0, second);
}

Dataset merge_small_stations(const Dataset& data, GroupKey key, int threshold) {
  Dataset out;
  out.options1 = data.options1;
  out.options2 = data.options2;
  struct Acc {
    StationData st;
    double cov_weighted = 0.0;
    bool all_cov = true;
  };
  std::map<std::string, Acc> merged;
  for (const StationData& st : data.stations) {
    const std::string g = group_of(st.station_id, key);
    if (st.n >= threshold) {
      out.stations.push_back(st);
      continue;
    }
    auto [it, fresh] = merged.try_emplace(g);
    Acc& acc = it->second;
    if (fresh) {
      acc.st.station_id = g + (key == GroupKey::department ? "-small-merged" : "-small");
      acc.st.round1 = Counts::Zero(st.round1.size());
      acc.st.round2 = Counts::Zero(st.round2.size());
    }
    acc.st.round1 += st.round1;
    acc.st.round2 += st.round2;
    acc.st.n += st.n;
    if (st.covariate) {
      acc.cov_weighted += st.n * *st.covariate;
    } else {
      acc.all_cov = false;
    }
  }
  for (auto& [g, acc] : merged) {
    if (acc.all_cov && acc.st.n > 0) acc.st.covariate = acc.cov_weighted / acc.st.n;
    out.stations.push_back(std::move(acc.st));
  }
  std::sort(out.stations.begin(), out.stations.end(),
            [](const StationData& a, const StationData& b) { return a.station_id < b.station_id; });
  return out;
}

namespace {

// Returns the merged option list and the old-index -> new-index map.
std::pair<std::vector<std::string>, std::vector<int>> plan_merge(const std::vector<std::string>& opts,
                                                                 const std::vector<StationData>& stations,
                                                                 bool first_round, double threshold, int round,
                                                                 std::vector<OptionMerge>& mapping) {
  const int m = static_cast<int>(opts.size());
  std::vector<double> totals(m, 0.0);
  for (const StationData& st : stations) {
    const Counts& c = first_round ? st.round1 : st.round2;
    for (int i = 0; i < m; ++i) totals[i] += c[i];
  }
  double cast = 0.0;
  for (int i = 0; i + 1 < m; ++i) cast += totals[i];

  std::vector<std::string> kept;
  std::vector<bool> small(m, false);
  bool any_small = false;
  for (int i = 0; i + 1 < m; ++i) {
    small[i] = opts[i] == kOther || cast <= 0.0 || totals[i] / cast < threshold;
    if (small[i] && opts[i] != kOther) any_small = true;
    if (!small[i]) kept.push_back(opts[i]);
  }
  bool has_other = any_small;
  for (int i = 0; i + 1 < m; ++i) has_other = has_other || opts[i] == kOther;

  std::vector<std::string> out = kept;
  if (has_other) out.push_back(kOther);
  out.push_back(kAbstention);
  if (out.size() < 2) {
    throw DataError("round " + std::to_string(round) + ": fewer than two options remain after merging");
  }
  std::vector<int> index(m);
  for (int i = 0; i < m; ++i) {
    if (i == m - 1) {
      index[i] = static_cast<int>(out.size()) - 1;
    } else if (small[i]) {
      index[i] = static_cast<int>(out.size()) - 2;
      if (opts[i] != kOther) mapping.push_back({round, opts[i], kOther});
    } else {
      index[i] = static_cast<int>(std::find(out.begin(), out.end(), opts[i]) - out.begin());
    }
  }
  return {out, index};
}

Counts remap(const Counts& c, const std::vector<int>& index, int size) {
  Counts out = Counts::Zero(size);
  for (Eigen::Index i = 0; i < c.size(); ++i) out[index[i]] += c[i];
  return out;
}

}  // namespace

CandidateMergeResult merge_small_candidates(const Dataset& data, double threshold_share) {
  CandidateMergeResult res;
  auto [o1, idx1] = plan_merge(data.options1, data.stations, true, threshold_share, 1, res.mapping);
  auto [o2, idx2] = plan_merge(data.options2, data.stations, false, threshold_share, 2, res.mapping);
  res.data.options1 = o1;
  res.data.options2 = o2;
  for (const StationData& st : data.stations) {
    StationData s = st;
    s.round1 = remap(st.round1, idx1, static_cast<int>(o1.size()));
    s.round2 = remap(st.round2, idx2, static_cast<int>(o2.size()));
    res.data.stations.push_back(std::move(s));
  }
  return res;
}

double clamped_log_density(double population, double area_km2) {
  if (!(population >= 0.0) || !(area_km2 > 0.0)) {
    throw DataError("population must be >= 0 and area > 0");
  }
  if (population == 0.0) return 0.0;
  return std::max(0.0, std::log(population / area_km2));
}

CorpusStats corpus_stats(const std::vector<std::pair<double, double>>& population_area) {
  const std::size_t n = population_area.size();
  if (n < 2) throw DataError("covariate standardization needs at least two stations");
  std::vector<double> v;
  v.reserve(n);
  for (const auto& [p, a] : population_area) v.push_back(clamped_log_density(p, a));
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw DataError("covariate has zero standard deviation across stations");
  return {mean, sd};
}

double covariate_density(double population, double area_km2, const CorpusStats& stats) {
  if (!(stats.sd > 0.0)) throw DataError("covariate has zero standard deviation across stations");
  return (clamped_log_density(population, area_km2) - stats.mean) / stats.sd;
}

Dataset attach_covariates(const Dataset& data, std::istream& census, const std::string& source) {
  std::string line;
  if (!std::getline(census, line)) fail_at(source, 1, "empty file");
  expect_header(line, {"station_id", "population", "area_km2"}, source);
  std::map<std::string, std::pair<double, double>> table;
  long lineno = 1;
  while (std::getline(census, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) fail_at(source, lineno, "expected 3 fields, got " + std::to_string(f.size()));
    const double pop = parse_double(f[1], source, lineno, "population");
    const double area = parse_double(f[2], source, lineno, "area_km2");
    if (pop < 0.0 || area <= 0.0) fail_at(source, lineno, "population must be >= 0 and area > 0");
    if (!table.emplace(f[0], std::make_pair(pop, area)).second) {
      fail_at(source, lineno, "duplicate station_id '" + f[0] + "'");
    }
  }
  std::vector<std::pair<double, double>> present;
  for (const StationData& st : data.stations) {
    auto it = table.find(st.station_id);
    if (it != table.end()) present.push_back(it->second);
  }
  const CorpusStats stats = corpus_stats(present);
  Dataset out = data;
  for (StationData& st : out.stations) {
    auto it = table.find(st.station_id);
    if (it != table.end()) st.covariate = covariate_density(it->second.first, it->second.second, stats);
  }
  return out;
}

std::set<std::string> read_exclusion_list(std::istream& in) {
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t");
    ids.insert(line.substr(b, e - b + 1));
  }
  return ids;
}

Dataset apply_exclusions(const Dataset& data, const std::set<std::string>& ids, std::vector<Rejection>& log) {
  Dataset out;
  out.options1 = data.options1;
  out.options2 = data.options2;
  for (const StationData& st : data.stations) {
    if (ids.count(st.station_id)) {
      log.push_back({st.station_id, "excluded by list", st.n, st.n});
    } else {
      out.stations.push_back(st);
    }
  }
  return out;
}

void write_rejection_log(std::ostream& out, const std::vector<Rejection>& log) {
  out << "station_id,reason,registered_round1,registered_round2\n";
  auto num = [](long v) { return v < 0 ? std::string() : std::to_string(v); };
  for (const Rejection& r : log) {
    out << r.station_id << ',' << r.reason << ',' << num(r.registered1) << ',' << num(r.registered2) << '\n';
  }
}

void validate_dataset(const Dataset& data) {
  const auto I = static_cast<Eigen::Index>(data.options1.size());
  const auto J = static_cast<Eigen::Index>(data.options2.size());
  if (I < 2 || J < 2) throw DataError("dataset needs at least two options per round");
  std::set<std::string> ids;
  for (const StationData& st : data.stations) {
    const std::string where = "station '" + st.station_id + "'";
    if (!ids.insert(st.station_id).second) throw DataError("duplicate " + where);
    if (st.station_id.find(',') != std::string::npos) throw DataError(where + ": id contains a comma");
    if (st.round1.size() != I || st.round2.size() != J) throw DataError(where + ": wrong number of options");
    if (st.round1.minCoeff() < 0 || st.round2.minCoeff() < 0) throw DataError(where + ": negative count");
    if (st.round1.sum() != st.n || st.round2.sum() != st.n) throw DataError(where + ": rounds do not sum to n");
  }
}

void emit_dataset_csv(std::ostream& out, const Dataset& data) {
  validate_dataset(data);
  out << "station_id,n,covariate";
  for (std::size_t i = 1; i <= data.options1.size(); ++i) out << ",r_" << i;
  for (std::size_t j = 1; j <= data.options2.size(); ++j) out << ",s_" << j;
  out << '\n';
  for (const StationData& st : data.stations) {
    out << st.station_id << ',' << st.n << ',';
    if (st.covariate) out << format_double(*st.covariate);
    for (Eigen::Index i = 0; i < st.round1.size(); ++i) out << ',' << st.round1[i];
    for (Eigen::Index j = 0; j < st.round2.size(); ++j) out << ',' << st.round2[j];
    out << '\n';
  }
}

std::string dataset_sidecar_json(const Dataset& data) {
  nlohmann::json j;
  j["round1_options"] = data.options1;
  j["round2_options"] = data.options2;
  return j.dump(2) + "\n";
}

Dataset load_dataset_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) fail_at(source, 1, "empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "station_id" || header[1] != "n") {
    fail_at(source, 1, "header must start with station_id,n");
  }
  std::size_t pos = 2;
  const bool has_cov = header.size() > 2 && header[2] == "covariate";
  if (has_cov) ++pos;
  int I = 0, J = 0;
  while (pos < header.size() && header[pos] == "r_" + std::to_string(I + 1)) ++I, ++pos;
  while (pos < header.size() && header[pos] == "s_" + std::to_string(J + 1)) ++J, ++pos;
  if (pos != header.size() || I < 2 || J < 2) {
    fail_at(source, 1, "header must be station_id,n[,covariate],r_1..r_I,s_1..s_J with I,J >= 2");
  }

  Dataset out;
  for (int i = 1; i <= I; ++i) out.options1.push_back("r_" + std::to_string(i));
  for (int j = 1; j <= J; ++j) out.options2.push_back("s_" + std::to_string(j));
  std::set<std::string> ids;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      fail_at(source, lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    StationData st;
    st.station_id = f[0];
    if (st.station_id.empty()) fail_at(source, lineno, "empty station_id");
    if (!ids.insert(st.station_id).second) fail_at(source, lineno, "duplicate station_id '" + st.station_id + "'");
    const long n = parse_long(f[1], source, lineno, "n");
    if (n < 0 || n > std::numeric_limits<int>::max()) fail_at(source, lineno, "n out of range");
    st.n = static_cast<int>(n);
    std::size_t c = 2;
    if (has_cov) {
      if (!f[2].empty()) st.covariate = parse_double(f[2], source, lineno, "covariate");
      ++c;
    }
    st.round1.resize(I);
    st.round2.resize(J);
    for (int i = 0; i < I; ++i, ++c) {
      const long v = parse_long(f[c], source, lineno, header[c]);
      if (v < 0 || v > n) fail_at(source, lineno, header[c] + " out of range");
      st.round1[i] = static_cast<int>(v);
    }
    for (int j = 0; j < J; ++j, ++c) {
      const long v = parse_long(f[c], source, lineno, header[c]);
      if (v < 0 || v > n) fail_at(source, lineno, header[c] + " out of range");
      st.round2[j] = static_cast<int>(v);
    }
    if (st.round1.sum() != st.n) fail_at(source, lineno, "first-round counts do not sum to n");
    if (st.round2.sum() != st.n) fail_at(source, lineno, "second-round counts do not sum to n");
    out.stations.push_back(std::move(st));
  }
  return out;
}

void apply_sidecar_json(Dataset& data, const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid dataset sidecar: ") + e.what());
  }
  auto names = [&](const char* key, std::size_t want) {
    if (!j.contains(key) || !j[key].is_array()) throw DataError(std::string("sidecar lacks ") + key);
    auto v = j[key].get<std::vector<std::string>>();
    if (v.size() != want) throw DataError(std::string("sidecar ") + key + " length does not match the dataset");
    return v;
  };
  data.options1 = names("round1_options", data.options1.size());
  data.options2 = names("round2_options", data.options2.size());
}

void emit_dataset(const Dataset& data, const std::string& path) {
  std::ostringstream ss;
  emit_dataset_csv(ss, data);
  write_file_atomic(path, ss.str());
  write_file_atomic(path + ".json", dataset_sidecar_json(data));
}

Dataset load_dataset(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  std::istringstream in(text);
  Dataset d = load_dataset_csv(in, path);
  std::string side;
  try {
    side = read_file(path + ".json");
  } catch (const std::runtime_error&) {
    return d;
  }
  apply_sidecar_json(d, side);
  return d;
}

}  // namespace spmc
