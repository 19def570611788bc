#pragma once

// Stage view: a K-state left-to-right HMM with diagonal Gaussian emissions
// over utterance vectors. States may only repeat or advance by one, and every
// conversation starts in the first state.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvsum/embed.hpp"
#include "mvsum/segmentation.hpp"

namespace mvsum::stage {

inline constexpr double kVarianceFloor = 1e-3;

struct HmmModel {
  std::size_t states = 0;
  std::size_t dim = 0;
  std::vector<double> means;      // states x dim
  std::vector<double> variances;  // states x dim
  std::vector<double> log_trans;  // states x states, -inf outside the band
  std::vector<double> log_init;   // (0, -inf, ..., -inf)

  double log_transition(std::size_t from, std::size_t to) const { return log_trans[from * states + to]; }
};

// Left-to-right skeleton: self/advance 0.5 each (last state self 1.0), unit
// variances, zero means.
HmmModel left_to_right(std::size_t states, std::size_t dim);

// Throws when the transition mask, row sums, start vector or variance floor
// invariants do not hold.
void check_invariants(const HmmModel& model);

// log N(x; mean_k, diag(var_k)) for every state.
std::vector<double> log_emissions(const HmmModel& model, std::span<const double> x);

struct Posteriors {
  double loglik = 0;
  std::size_t steps = 0;
  std::vector<double> gamma;  // steps x states
  std::vector<double> xi;     // (steps - 1) x states x states

  double state_posterior(std::size_t t, std::size_t k, std::size_t states) const { return gamma[t * states + k]; }
};

Posteriors forward_backward(const HmmModel& model, const embed::EmbeddingMatrix& obs);

struct StageAssignment {
  std::vector<std::size_t> path;  // 0-based states, non-decreasing, unit steps
  double log_score = 0;
  Segmentation segmentation;      // maximal runs of equal state
};

// Most probable legal path. Ties prefer the lower state, resolved from the
// last position backwards as the path is traced back.
StageAssignment viterbi(const HmmModel& model, const embed::EmbeddingMatrix& obs);

// Chunk initialisation: each sequence is cut into K equal contiguous chunks
// and state k takes the pooled moments of chunk k.
HmmModel initial_model(std::size_t states, std::span<const embed::EmbeddingMatrix> sequences);

struct EmOptions {
  std::size_t max_iter = 50;
  double tol = 1e-4;  // stop once the total log-likelihood gain drops below this
};

struct EmResult {
  HmmModel model;
  std::vector<double> loglik;  // total log-likelihood of each evaluated model
  std::size_t iterations = 0;  // M-steps performed
  bool converged = false;
};

EmResult em_fit(const HmmModel& init, std::span<const embed::EmbeddingMatrix> sequences, const EmOptions& opts = {});

Segmentation stage_view(const corpus::Conversation& conv, const embed::EmbeddingMatrix& e, const HmmModel& model);

// Most frequent utterance tokens per Viterbi state across a corpus.
std::vector<std::vector<std::string>> top_words(const HmmModel& model, std::span<const corpus::Conversation> convs,
                                                const embed::EmbeddingTable& table, std::size_t per_state);

// JSON: {"K", "dim", "means", "vars", "trans", "init"} with probabilities.
void save_model(std::ostream& os, const HmmModel& model);
HmmModel load_model(std::istream& is);
void save_model_file(const std::string& path, const HmmModel& model);
HmmModel load_model_file(const std::string& path);

}  // namespace mvsum::stage
