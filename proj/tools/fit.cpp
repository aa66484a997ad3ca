#include "fit.hpp"

#include <stdexcept>

namespace spmc::cli {

Stage parse_stage(const std::string& s) {
  if (s == "map") return Stage::map;
  if (s == "is") return Stage::is;
  if (s == "pmmh") return Stage::pmmh;
  if (s == "all") return Stage::all;
  throw std::invalid_argument("unknown stage '" + s + "' (map, is, pmmh, all)");
}

Variant parse_model_flag(const std::string& s) {
  if (s == "1") return Variant::model1;
  if (s == "2") return Variant::model2;
  if (s == "3") return Variant::model3;
  return parse_variant(s);
}

ModelSpec spec_for(const Dataset& data, const FitOptions& opt) {
  ModelSpec spec = opt.spec;
  spec.I = static_cast<int>(data.options1.size());
  spec.J = static_cast<int>(data.options2.size());
  spec.validate();
  return spec;
}

std::unique_ptr<LogPosterior> make_target(const ModelSpec& spec, const Dataset& data, const FitOptions& opt) {
  if (data.stations.empty()) throw DataError("dataset has no stations");
  for (const StationData& st : data.stations) {
    validate_station(spec, st);
    if (spec.variant == Variant::model3 && !st.covariate) {
      throw DataError("model3 needs a covariate for every station; '" + st.station_id + "' has none");
    }
  }
  if (opt.gaussian_likelihood) return std::make_unique<GaussianApproxPosterior>(spec, data.stations);
  return std::make_unique<EIPosterior>(spec, data.stations, opt.estimator, opt.threads);
}

FitResult fit_dataset(const Dataset& data, const FitOptions& opt, Stage stage) {
  opt.schedule.validate();
  if (opt.n_is < 1 || opt.hessian_n_is < 1) throw std::invalid_argument("N_IS must be >= 1");
  if (opt.is_draws < 2) throw std::invalid_argument("need at least 2 importance sampling draws");
  if (opt.pmmh_steps < 1) throw std::invalid_argument("need at least 1 PMMH step");
  FitResult res;
  res.spec = spec_for(data, opt);
  const auto target = make_target(res.spec, data, opt);

  res.map = adam_map(*target, opt.schedule, derive_seed(opt.seed, 1));
  res.laplace = hessian_at(*target, res.map.mode, opt.hessian_n_is, derive_seed(opt.seed, 2));
  if (stage == Stage::is || stage == Stage::all) {
    res.is = random_weight_is(*target, res.laplace, opt.is_draws, opt.n_is, derive_seed(opt.seed, 3), opt.threads);
  }
  if (stage == Stage::pmmh || stage == Stage::all) {
    res.pmmh = pmmh(*target, res.laplace.mode, res.laplace, opt.pmmh_steps, opt.step_scale, opt.n_is,
                    derive_seed(opt.seed, 4));
    res.pmmh_burn_in = opt.pmmh_burn_in >= 0 ? opt.pmmh_burn_in : opt.pmmh_steps / 5;
    if (res.pmmh_burn_in >= opt.pmmh_steps) throw std::invalid_argument("PMMH burn-in must be below the step count");
  }
  return res;
}

}  // namespace spmc::cli
