#include "fedglmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "fedglmm/errors.hpp"
#include "fedglmm/log.hpp"
#include "json.hpp"

namespace fedglmm::sim {

namespace {

using json = nlohmann::json;

// How far the mismatched panel's populations drift beyond the study's own.
constexpr double kSisterFst = 0.05;

std::string padded_id(const char* prefix, long index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06ld", prefix, index);
  return buf;
}

// Balding-Nichols: Beta(p(1-F)/F, (1-p)(1-F)/F) via two gamma draws.
double bn_draw(std::mt19937_64& rng, double p, double f) {
  if (f <= 0.0) return p;
  const double scale = (1.0 - f) / f;
  std::gamma_distribution<double> ga(p * scale, 1.0);
  std::gamma_distribution<double> gb((1.0 - p) * scale, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  const double s = x + y;
  if (!(s > 0.0)) return p;  // underflow at extreme shapes
  return x / s;
}

void fill_genotypes(std::mt19937_64& rng, const Eigen::MatrixXd& pop_freqs,
                    const std::vector<int>& population, Eigen::MatrixXd& dosages) {
  std::binomial_distribution<int> binom;
  using Param = std::binomial_distribution<int>::param_type;
  // Draw order is fixed: individuals outer, variants inner.
  for (Eigen::Index i = 0; i < dosages.cols(); ++i) {
    const int pop = population[static_cast<size_t>(i)];
    for (Eigen::Index v = 0; v < dosages.rows(); ++v) {
      dosages(v, i) = binom(rng, Param(2, pop_freqs(pop, v)));
    }
  }
}

}  // namespace

void validate_spec(const SimSpec& spec) {
  if (spec.n_individuals < 1) throw ParamError("sim spec: n_individuals must be >= 1");
  if (spec.n_variants < 1) throw ParamError("sim spec: n_variants must be >= 1");
  if (spec.proportions.empty()) throw ParamError("sim spec: at least one population required");
  double total = 0.0;
  for (double w : spec.proportions) {
    if (!(w > 0.0)) throw ParamError("sim spec: population proportions must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ParamError("sim spec: population proportions sum to " + std::to_string(total) +
                     ", expected 1");
  }
  if (spec.fst.size() != spec.proportions.size()) {
    throw ParamError("sim spec: need one fst value per population");
  }
  for (double f : spec.fst) {
    if (!(f >= 0.0) || f >= 1.0) throw ParamError("sim spec: fst must lie in [0, 1)");
  }
  if (spec.n_causal < 0) throw ParamError("sim spec: n_causal must be >= 0");
  if (spec.n_causal > spec.n_variants) {
    throw ParamError("sim spec: n_causal exceeds n_variants");
  }
  if (!(spec.causal_max_af > 0.0) || spec.causal_max_af > 0.5) {
    throw ParamError("sim spec: causal_max_af must lie in (0, 0.5]");
  }
  if (!(spec.effect_size_sd >= 0.0)) throw ParamError("sim spec: effect_size_sd must be >= 0");
  if (!(spec.noise_sd >= 0.0)) throw ParamError("sim spec: noise_sd must be >= 0");
  if (!spec.population_bias.empty() &&
      spec.population_bias.size() != spec.proportions.size()) {
    throw ParamError("sim spec: population_bias must be empty or one value per population");
  }
  for (double b : spec.population_bias) {
    if (!std::isfinite(b)) throw ParamError("sim spec: population_bias must be finite");
  }
  if (spec.trait.binary && (!(spec.trait.prevalence > 0.0) || spec.trait.prevalence >= 1.0)) {
    throw ParamError("sim spec: prevalence must lie in (0, 1)");
  }
}

SimSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim spec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("sim spec: top level must be a JSON object");

  static const std::set<std::string> known = {
      "n_individuals", "n_variants",      "proportions", "fst",
      "n_causal",      "causal_max_af",   "effect_size_sd", "population_bias",
      "gender_bias",   "noise_sd",        "trait_kind",  "prevalence",
      "seed"};
  for (const auto& item : j.items()) {
    if (known.find(item.key()) == known.end()) {
      throw ConfigError("sim spec: unknown key '" + item.key() + "'");
    }
  }

  SimSpec spec;
  try {
    if (j.contains("n_individuals")) spec.n_individuals = j.at("n_individuals").get<long>();
    if (j.contains("n_variants")) spec.n_variants = j.at("n_variants").get<long>();
    if (j.contains("proportions")) {
      spec.proportions = j.at("proportions").get<std::vector<double>>();
    }
    if (j.contains("fst")) spec.fst = j.at("fst").get<std::vector<double>>();
    if (j.contains("n_causal")) spec.n_causal = j.at("n_causal").get<long>();
    if (j.contains("causal_max_af")) spec.causal_max_af = j.at("causal_max_af").get<double>();
    if (j.contains("effect_size_sd")) {
      spec.effect_size_sd = j.at("effect_size_sd").get<double>();
    }
    if (j.contains("population_bias")) {
      spec.population_bias = j.at("population_bias").get<std::vector<double>>();
    }
    if (j.contains("gender_bias")) spec.gender_bias = j.at("gender_bias").get<double>();
    if (j.contains("noise_sd")) spec.noise_sd = j.at("noise_sd").get<double>();
    if (j.contains("trait_kind")) {
      const std::string kind = j.at("trait_kind").get<std::string>();
      if (kind == "quantitative") {
        spec.trait.binary = false;
      } else if (kind == "binary") {
        spec.trait.binary = true;
      } else {
        throw ConfigError("sim spec: trait_kind must be 'quantitative' or 'binary', got '" +
                          kind + "'");
      }
    }
    if (j.contains("prevalence")) spec.trait.prevalence = j.at("prevalence").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sim spec: bad field type: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

std::string spec_to_json(const SimSpec& spec) {
  json j;
  j["n_individuals"] = spec.n_individuals;
  j["n_variants"] = spec.n_variants;
  j["proportions"] = spec.proportions;
  j["fst"] = spec.fst;
  j["n_causal"] = spec.n_causal;
  j["causal_max_af"] = spec.causal_max_af;
  j["effect_size_sd"] = spec.effect_size_sd;
  j["population_bias"] = spec.population_bias;
  j["gender_bias"] = spec.gender_bias;
  j["noise_sd"] = spec.noise_sd;
  j["trait_kind"] = spec.trait.binary ? "binary" : "quantitative";
  if (spec.trait.binary) j["prevalence"] = spec.trait.prevalence;
  j["seed"] = spec.seed;
  return j.dump(2);
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& salt, long index) {
  // FNV-1a over the master seed, the salt, and the index.
  std::uint64_t h = 14695981039346656037ull;
  const auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffull;
      h *= 1099511628211ull;
    }
  };
  mix(master);
  for (const char c : salt) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  mix(static_cast<std::uint64_t>(index));
  return h;
}

SimOutput simulate_populations(const SimSpec& spec, bool matched_reference,
                               long reference_size) {
  validate_spec(spec);
  if (reference_size < 2) throw ParamError("reference_size must be >= 2");
  const long n = spec.n_individuals;
  const long n_var = spec.n_variants;
  const int n_pop = static_cast<int>(spec.proportions.size());

  std::mt19937_64 rng(spec.seed);
  SimOutput out;

  std::uniform_real_distribution<double> unif_af(0.05, 0.95);
  out.ancestral_freqs.resize(n_var);
  for (long v = 0; v < n_var; ++v) out.ancestral_freqs[v] = unif_af(rng);

  out.population_freqs.resize(n_pop, n_var);
  for (int k = 0; k < n_pop; ++k) {
    for (long v = 0; v < n_var; ++v) {
      out.population_freqs(k, v) = bn_draw(rng, out.ancestral_freqs[v], spec.fst[k]);
    }
  }

  // Causal eligibility is judged on the generating (ancestral) frequency.
  std::vector<long> eligible;
  for (long v = 0; v < n_var; ++v) {
    if (out.ancestral_freqs[v] < spec.causal_max_af) eligible.push_back(v);
  }
  if (static_cast<long>(eligible.size()) < spec.n_causal) {
    throw ParamError("only " + std::to_string(eligible.size()) +
                     " variants fall under the causal frequency cap " +
                     std::to_string(spec.causal_max_af) + "; need " +
                     std::to_string(spec.n_causal));
  }
  for (long i = 0; i < spec.n_causal; ++i) {
    std::uniform_int_distribution<long> pick(i, static_cast<long>(eligible.size()) - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  std::vector<long> causal(eligible.begin(), eligible.begin() + spec.n_causal);
  std::sort(causal.begin(), causal.end());

  out.genotypes.variant_ids.reserve(n_var);
  for (long v = 0; v < n_var; ++v) out.genotypes.variant_ids.push_back(padded_id("v", v + 1));

  out.causal_truth.reserve(causal.size());
  if (spec.effect_size_sd > 0.0) {
    std::normal_distribution<double> effect_dist(0.0, spec.effect_size_sd);
    for (const long v : causal) {
      out.causal_truth.push_back(
          {out.genotypes.variant_ids[static_cast<size_t>(v)], effect_dist(rng)});
    }
  } else {
    for (const long v : causal) {
      out.causal_truth.push_back({out.genotypes.variant_ids[static_cast<size_t>(v)], 0.0});
    }
  }

  out.population.resize(n);
  std::discrete_distribution<int> pop_dist(spec.proportions.begin(), spec.proportions.end());
  for (long i = 0; i < n; ++i) out.population[i] = pop_dist(rng);

  out.gender.resize(n);
  std::bernoulli_distribution coin(0.5);
  for (long i = 0; i < n; ++i) out.gender[i] = coin(rng) ? 1 : 0;

  out.genotypes.sample_ids.reserve(n);
  for (long i = 0; i < n; ++i) out.genotypes.sample_ids.push_back(padded_id("s", i + 1));
  out.genotypes.dosages.resize(n_var, n);
  fill_genotypes(rng, out.population_freqs, out.population, out.genotypes.dosages);

  out.liability.resize(n);
  for (long i = 0; i < n; ++i) {
    double y = 0.0;
    for (size_t c = 0; c < causal.size(); ++c) {
      y += out.causal_truth[c].effect * out.genotypes.dosages(causal[c], i);
    }
    if (!spec.population_bias.empty()) y += spec.population_bias[out.population[i]];
    y += spec.gender_bias * out.gender[i];
    out.liability[i] = y;
  }
  if (spec.noise_sd > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    for (long i = 0; i < n; ++i) out.liability[i] += noise(rng);
  }

  out.phenotype.sample_ids = out.genotypes.sample_ids;
  if (spec.trait.binary) {
    // Case status by liability rank: top prevalence fraction become cases.
    const long n_cases =
        std::min(n, std::max<long>(0, std::lround(spec.trait.prevalence * n)));
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return out.liability[a] > out.liability[b]; });
    out.phenotype.values = Eigen::VectorXd::Zero(n);
    for (long r = 0; r < n_cases; ++r) out.phenotype.values[order[r]] = 1.0;
  } else {
    out.phenotype.values = out.liability;
  }

  // The panel draws come from their own stream so that toggling the panel
  // cannot change the study data.
  std::mt19937_64 ref_rng(
      derive_seed(spec.seed, matched_reference ? "reference-matched" : "reference-mismatched"));
  Eigen::MatrixXd ref_freqs;
  if (matched_reference) {
    ref_freqs = out.population_freqs;
  } else {
    // Sister populations: same ancestral pull, further drift of their own.
    ref_freqs.resize(n_pop, n_var);
    for (int k = 0; k < n_pop; ++k) {
      for (long v = 0; v < n_var; ++v) {
        ref_freqs(k, v) = bn_draw(ref_rng, out.population_freqs(k, v), kSisterFst);
      }
    }
  }
  std::vector<int> ref_population(reference_size);
  for (long i = 0; i < reference_size; ++i) {
    ref_population[i] = static_cast<int>(i % n_pop);  // equal shares per population
  }
  out.reference_panel.variant_ids = out.genotypes.variant_ids;
  out.reference_panel.sample_ids.reserve(reference_size);
  for (long i = 0; i < reference_size; ++i) {
    out.reference_panel.sample_ids.push_back(padded_id("ref", i + 1));
  }
  out.reference_panel.dosages.resize(n_var, reference_size);
  fill_genotypes(ref_rng, ref_freqs, ref_population, out.reference_panel.dosages);

  FEDGLMM_DEBUG("simulated %ld samples x %ld variants, %zu causal, panel %ld samples (%s)", n,
                n_var, out.causal_truth.size(), reference_size,
                matched_reference ? "matched" : "mismatched");
  return out;
}

}  // namespace fedglmm::sim
