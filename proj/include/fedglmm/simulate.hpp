#pragma once

// Synthetic GWAS generator. Population structure follows the Balding-Nichols
// model: per-variant ancestral frequencies are drawn once, then each
// population drifts away from them at its own divergence parameter, and
// genotypes are binomial draws from the population frequency. Phenotypes mix
// sparse causal effects with population and gender offsets plus Gaussian
// noise; binary traits threshold the quantitative liability at a target
// prevalence.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fedglmm/types.hpp"

namespace fedglmm::sim {

struct TraitSpec {
  bool binary = false;
  double prevalence = 0.5;  // case fraction, binary traits only
};

struct SimSpec {
  long n_individuals = 3000;
  long n_variants = 0;
  std::vector<double> proportions;      // population mixing weights, sum to 1
  std::vector<double> fst;              // divergence per population, [0, 1)
  long n_causal = 20;
  double causal_max_af = 0.1;           // eligibility cap on the ancestral frequency
  double effect_size_sd = 0.5;
  std::vector<double> population_bias;  // phenotype offset per population
  double gender_bias = 0.0;
  double noise_sd = 1.0;
  TraitSpec trait;
  std::uint64_t seed = 0;
};

// Throws ParamError when a field is out of range (proportions must sum to 1,
// each fst in [0,1), causal_max_af in (0, 0.5], positive counts).
void validate_spec(const SimSpec& spec);

// JSON round-trip for spec files and run manifests.
SimSpec spec_from_json(const std::string& text);
std::string spec_to_json(const SimSpec& spec);

struct CausalEffect {
  std::string variant_id;
  double effect = 0.0;
};

struct SimOutput {
  GenotypeMatrix genotypes;          // n_variants x n_individuals
  Eigen::VectorXd liability;         // quantitative phenotype before any thresholding
  PhenotypeVector phenotype;         // real valued, or 0/1 for binary traits
  std::vector<int> population;       // per-sample population index
  std::vector<int> gender;           // per-sample 0/1
  std::vector<CausalEffect> causal_truth;
  ReferencePanel reference_panel;
  Eigen::VectorXd ancestral_freqs;   // generating frequency per variant
  Eigen::MatrixXd population_freqs;  // n_populations x n_variants
};

// Stable seed derivation for independent sub-streams (reference panel, per
// study generators). Pure function of its inputs.
std::uint64_t derive_seed(std::uint64_t master, const std::string& salt, long index = 0);

// Generates one study. The reference panel holds `reference_size` samples
// drawn in equal shares from either the study's own populations (matched) or
// from sister populations that drifted further from the same ancestral
// frequencies (mismatched). Study data is identical for both settings under
// the same seed; only the panel differs.
SimOutput simulate_populations(const SimSpec& spec, bool matched_reference = true,
                               long reference_size = 400);

}  // namespace fedglmm::sim
