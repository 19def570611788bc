#include "mvsum/stagehmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>

#include "json.hpp"
#include "mvsum/error.hpp"

namespace mvsum::stage {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void check_observations(const HmmModel& model, const embed::EmbeddingMatrix& obs) {
  if (obs.rows == 0) throw Error("HMM: sequence '" + obs.id + "' has no observations");
  if (obs.dim != model.dim)
    throw ShapeError("HMM: observation dim " + std::to_string(obs.dim) + " != model dim " + std::to_string(model.dim));
  for (double x : obs.data)
    if (std::isnan(x)) throw NumericError("HMM: NaN in observations of '" + obs.id + "'");
}

// steps x states emission log-densities.
std::vector<double> emission_table(const HmmModel& model, const embed::EmbeddingMatrix& obs) {
  std::vector<double> e;
  e.reserve(obs.rows * model.states);
  for (std::size_t t = 0; t < obs.rows; ++t) {
    auto row = log_emissions(model, obs.row(t));
    e.insert(e.end(), row.begin(), row.end());
  }
  return e;
}

}  // namespace

HmmModel left_to_right(std::size_t states, std::size_t dim) {
  if (states == 0 || dim == 0) throw Error("HMM: states and dim must be positive");
  HmmModel m;
  m.states = states;
  m.dim = dim;
  m.means.assign(states * dim, 0.0);
  m.variances.assign(states * dim, 1.0);
  m.log_trans.assign(states * states, kNegInf);
  for (std::size_t i = 0; i + 1 < states; ++i) {
    m.log_trans[i * states + i] = std::log(0.5);
    m.log_trans[i * states + i + 1] = std::log(0.5);
  }
  m.log_trans[(states - 1) * states + states - 1] = 0.0;
  m.log_init.assign(states, kNegInf);
  m.log_init[0] = 0.0;
  return m;
}

void check_invariants(const HmmModel& m) {
  const std::size_t k = m.states;
  if (m.means.size() != k * m.dim || m.variances.size() != k * m.dim || m.log_trans.size() != k * k ||
      m.log_init.size() != k)
    throw ShapeError("HMM: parameter sizes do not match K and dim");
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = m.log_transition(i, j);
      const bool allowed = j == i || j == i + 1;
      if (!allowed && lp != kNegInf) throw Error("HMM: transition " + std::to_string(i) + "->" + std::to_string(j) +
                                                 " violates the left-to-right mask");
      row += std::exp(lp);
    }
    if (std::abs(row - 1.0) > 1e-9) throw Error("HMM: transition row " + std::to_string(i) + " does not sum to 1");
  }
  if (m.log_init[0] != 0.0 || std::any_of(m.log_init.begin() + 1, m.log_init.end(), [](double x) { return x != kNegInf; }))
    throw Error("HMM: start distribution must be concentrated on the first state");
  for (double v : m.variances)
    if (!(v >= kVarianceFloor)) throw Error("HMM: variance below floor");
}

std::vector<double> log_emissions(const HmmModel& model, std::span<const double> x) {
  static const double log_2pi = std::log(2.0 * std::numbers::pi);
  std::vector<double> out(model.states);
  for (std::size_t k = 0; k < model.states; ++k) {
    const double* mu = model.means.data() + k * model.dim;
    const double* var = model.variances.data() + k * model.dim;
    double acc = 0;
    for (std::size_t j = 0; j < model.dim; ++j) {
      const double diff = x[j] - mu[j];
      acc += log_2pi + std::log(var[j]) + diff * diff / var[j];
    }
    out[k] = -0.5 * acc;
  }
  return out;
}

Posteriors forward_backward(const HmmModel& model, const embed::EmbeddingMatrix& obs) {
  check_observations(model, obs);
  const std::size_t n = obs.rows;
  const std::size_t k = model.states;
  const std::vector<double> e = emission_table(model, obs);

  std::vector<double> alpha(n * k, kNegInf), beta(n * k, 0.0);
  for (std::size_t s = 0; s < k; ++s) alpha[s] = model.log_init[s] + e[s];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      const double a = alpha[(t - 1) * k + i];
      if (a == kNegInf) continue;
      for (std::size_t j = i; j <= std::min(i + 1, k - 1); ++j) {
        const double lt = model.log_transition(i, j);
        if (lt == kNegInf) continue;
        alpha[t * k + j] = log_add(alpha[t * k + j], a + lt);
      }
    }
    for (std::size_t j = 0; j < k; ++j)
      if (alpha[t * k + j] != kNegInf) alpha[t * k + j] += e[t * k + j];
  }

  double loglik = kNegInf;
  for (std::size_t s = 0; s < k; ++s) loglik = log_add(loglik, alpha[(n - 1) * k + s]);
  if (!std::isfinite(loglik)) throw NumericError("HMM: log-likelihood of '" + obs.id + "' is not finite");

  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      double acc = kNegInf;
      for (std::size_t j = i; j <= std::min(i + 1, k - 1); ++j) {
        const double lt = model.log_transition(i, j);
        if (lt == kNegInf) continue;
        acc = log_add(acc, lt + e[(t + 1) * k + j] + beta[(t + 1) * k + j]);
      }
      beta[t * k + i] = acc;
    }
  }

  Posteriors p;
  p.loglik = loglik;
  p.steps = n;
  p.gamma.resize(n * k);
  for (std::size_t idx = 0; idx < n * k; ++idx) {
    const double lg = alpha[idx] + beta[idx];
    p.gamma[idx] = lg == kNegInf ? 0.0 : std::exp(lg - loglik);
  }
  p.xi.assign(n > 0 ? (n - 1) * k * k : 0, 0.0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      const double a = alpha[t * k + i];
      if (a == kNegInf) continue;
      for (std::size_t j = i; j <= std::min(i + 1, k - 1); ++j) {
        const double lt = model.log_transition(i, j);
        if (lt == kNegInf) continue;
        const double lx = a + lt + e[(t + 1) * k + j] + beta[(t + 1) * k + j] - loglik;
        p.xi[(t * k + i) * k + j] = std::exp(lx);
      }
    }
  }
  return p;
}

StageAssignment viterbi(const HmmModel& model, const embed::EmbeddingMatrix& obs) {
  check_observations(model, obs);
  const std::size_t n = obs.rows;
  const std::size_t k = model.states;
  const std::vector<double> e = emission_table(model, obs);

  std::vector<double> delta(n * k, kNegInf);
  std::vector<std::size_t> back(n * k, 0);
  for (std::size_t s = 0; s < k; ++s) delta[s] = model.log_init[s] + e[s];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = kNegInf;
      std::size_t arg = j;
      // Predecessors in ascending order; strict '>' keeps the lower state on ties.
      for (std::size_t i = j > 0 ? j - 1 : 0; i <= j; ++i) {
        const double lt = model.log_transition(i, j);
        const double prev = delta[(t - 1) * k + i];
        if (lt == kNegInf || prev == kNegInf) continue;
        if (prev + lt > best) {
          best = prev + lt;
          arg = i;
        }
      }
      if (best != kNegInf) {
        delta[t * k + j] = best + e[t * k + j];
        back[t * k + j] = arg;
      }
    }
  }

  StageAssignment out;
  std::size_t state = 0;
  double best = kNegInf;
  for (std::size_t s = 0; s < k; ++s) {
    if (delta[(n - 1) * k + s] > best) {
      best = delta[(n - 1) * k + s];
      state = s;
    }
  }
  if (best == kNegInf) throw NumericError("HMM: no legal path for '" + obs.id + "'");
  out.log_score = best;
  out.path.assign(n, 0);
  for (std::size_t t = n; t-- > 0;) {
    out.path[t] = state;
    if (t > 0) state = back[t * k + state];
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (t == 0 || out.path[t] != out.path[t - 1]) out.segmentation.push_back({t, t});
    else out.segmentation.back().end = t;
  }
  return out;
}

HmmModel initial_model(std::size_t states, std::span<const embed::EmbeddingMatrix> sequences) {
  if (sequences.empty()) throw Error("HMM: no training sequences");
  const std::size_t dim = sequences.front().dim;
  HmmModel m = left_to_right(states, dim);

  std::vector<double> sum(states * dim, 0.0), sq(states * dim, 0.0), count(states, 0.0);
  std::vector<double> gsum(dim, 0.0), gsq(dim, 0.0);
  double gcount = 0;
  for (const embed::EmbeddingMatrix& seq : sequences) {
    if (seq.dim != dim) throw ShapeError("HMM: training sequences disagree on dimension");
    if (seq.rows == 0) throw Error("HMM: sequence '" + seq.id + "' has no observations");
    for (std::size_t t = 0; t < seq.rows; ++t) {
      const std::size_t s = t * states / seq.rows;
      auto x = seq.row(t);
      count[s] += 1;
      gcount += 1;
      for (std::size_t j = 0; j < dim; ++j) {
        sum[s * dim + j] += x[j];
        sq[s * dim + j] += x[j] * x[j];
        gsum[j] += x[j];
        gsq[j] += x[j] * x[j];
      }
    }
  }
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t j = 0; j < dim; ++j) {
      double mean, var;
      if (count[s] > 0) {
        mean = sum[s * dim + j] / count[s];
        var = sq[s * dim + j] / count[s] - mean * mean;
      } else {
        mean = gsum[j] / gcount;
        var = gsq[j] / gcount - mean * mean;
      }
      m.means[s * dim + j] = mean;
      m.variances[s * dim + j] = std::max(var, kVarianceFloor);
    }
  }
  return m;
}

EmResult em_fit(const HmmModel& init, std::span<const embed::EmbeddingMatrix> sequences, const EmOptions& opts) {
  check_invariants(init);
  if (sequences.empty()) throw Error("HMM: no training sequences");
  const std::size_t k = init.states;
  const std::size_t d = init.dim;

  EmResult res{init, {}, 0, false};
  HmmModel& m = res.model;
  for (;;) {
    // E-step, reduced in sequence order.
    std::vector<double> occ(k, 0.0), wsum(k * d, 0.0), self(k, 0.0), advance(k, 0.0);
    std::vector<std::vector<double>> gammas;
    gammas.reserve(sequences.size());
    double total = 0;
    for (const embed::EmbeddingMatrix& seq : sequences) {
      Posteriors p = forward_backward(m, seq);
      total += p.loglik;
      for (std::size_t t = 0; t < seq.rows; ++t) {
        auto x = seq.row(t);
        for (std::size_t s = 0; s < k; ++s) {
          const double g = p.gamma[t * k + s];
          occ[s] += g;
          for (std::size_t j = 0; j < d; ++j) wsum[s * d + j] += g * x[j];
        }
      }
      for (std::size_t t = 0; t + 1 < seq.rows; ++t) {
        for (std::size_t s = 0; s + 1 < k; ++s) {
          self[s] += p.xi[(t * k + s) * k + s];
          advance[s] += p.xi[(t * k + s) * k + s + 1];
        }
      }
      gammas.push_back(std::move(p.gamma));
    }

    if (!res.loglik.empty() && total - res.loglik.back() < opts.tol) {
      res.loglik.push_back(total);
      res.converged = true;
      break;
    }
    res.loglik.push_back(total);
    if (res.iterations >= opts.max_iter) break;

    // M-step. States that received no posterior mass keep their parameters.
    std::vector<double> new_means = m.means;
    for (std::size_t s = 0; s < k; ++s)
      if (occ[s] > 0)
        for (std::size_t j = 0; j < d; ++j) new_means[s * d + j] = wsum[s * d + j] / occ[s];
    std::vector<double> wsq(k * d, 0.0);
    for (std::size_t q = 0; q < sequences.size(); ++q) {
      const embed::EmbeddingMatrix& seq = sequences[q];
      for (std::size_t t = 0; t < seq.rows; ++t) {
        auto x = seq.row(t);
        for (std::size_t s = 0; s < k; ++s) {
          const double g = gammas[q][t * k + s];
          if (g == 0) continue;
          for (std::size_t j = 0; j < d; ++j) {
            const double diff = x[j] - new_means[s * d + j];
            wsq[s * d + j] += g * diff * diff;
          }
        }
      }
    }
    for (std::size_t s = 0; s < k; ++s) {
      if (occ[s] <= 0) continue;
      for (std::size_t j = 0; j < d; ++j)
        m.variances[s * d + j] = std::max(wsq[s * d + j] / occ[s], kVarianceFloor);
    }
    m.means = std::move(new_means);
    for (std::size_t s = 0; s + 1 < k; ++s) {
      const double denom = self[s] + advance[s];
      if (denom <= 0) continue;
      const double p_self = self[s] / denom;
      m.log_trans[s * k + s] = std::log(p_self);
      m.log_trans[s * k + s + 1] = std::log1p(-p_self);
    }
    ++res.iterations;
  }
  return res;
}

Segmentation stage_view(const corpus::Conversation& conv, const embed::EmbeddingMatrix& e, const HmmModel& model) {
  if (e.rows != conv.size())
    throw ShapeError("stage_view: " + std::to_string(e.rows) + " embedding rows for " + std::to_string(conv.size()) +
                     " utterances in '" + conv.id + "'");
  return viterbi(model, e).segmentation;
}

std::vector<std::vector<std::string>> top_words(const HmmModel& model, std::span<const corpus::Conversation> convs,
                                                const embed::EmbeddingTable& table, std::size_t per_state) {
  std::vector<std::map<std::string, std::size_t>> counts(model.states);
  for (const corpus::Conversation& c : convs) {
    auto it = table.find(c.id);
    if (it == table.end()) continue;
    const StageAssignment a = viterbi(model, it->second);
    for (std::size_t t = 0; t < c.size(); ++t)
      for (std::string& tok : corpus::tokenize(c.utterances[t].text))
        if (std::isalpha(static_cast<unsigned char>(tok.front()))) ++counts[a.path[t]][std::move(tok)];
  }
  std::vector<std::vector<std::string>> out(model.states);
  for (std::size_t s = 0; s < model.states; ++s) {
    std::vector<std::pair<std::string, std::size_t>> ranked(counts[s].begin(), counts[s].end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(per_state, ranked.size()); ++i) out[s].push_back(ranked[i].first);
  }
  return out;
}

void save_model(std::ostream& os, const HmmModel& m) {
  const auto rows = [](const std::vector<double>& flat, std::size_t r, std::size_t c, bool exp_values) {
    json out = json::array();
    for (std::size_t i = 0; i < r; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < c; ++j) row.push_back(exp_values ? std::exp(flat[i * c + j]) : flat[i * c + j]);
      out.push_back(std::move(row));
    }
    return out;
  };
  json init = json::array();
  for (double li : m.log_init) init.push_back(std::exp(li));
  json j = {{"K", m.states},
            {"dim", m.dim},
            {"means", rows(m.means, m.states, m.dim, false)},
            {"vars", rows(m.variances, m.states, m.dim, false)},
            {"trans", rows(m.log_trans, m.states, m.states, true)},
            {"init", std::move(init)}};
  os << j.dump(1) << '\n';
}

HmmModel load_model(std::istream& is) {
  HmmModel m;
  try {
    const json j = json::parse(is);
    m.states = j.at("K").get<std::size_t>();
    m.dim = j.at("dim").get<std::size_t>();
    const auto flat = [](const json& rows, std::size_t r, std::size_t c, bool log_values) {
      if (rows.size() != r) throw FormatError("HMM JSON: wrong row count");
      std::vector<double> out;
      for (const json& row : rows) {
        if (row.size() != c) throw FormatError("HMM JSON: wrong column count");
        for (const json& x : row) {
          const double v = x.get<double>();
          out.push_back(log_values ? (v == 0 ? kNegInf : std::log(v)) : v);
        }
      }
      return out;
    };
    m.means = flat(j.at("means"), m.states, m.dim, false);
    m.variances = flat(j.at("vars"), m.states, m.dim, false);
    m.log_trans = flat(j.at("trans"), m.states, m.states, true);
    m.log_init = flat(json::array({j.at("init")}), 1, m.states, true);
  } catch (const json::exception& e) {
    throw FormatError(std::string("HMM JSON: ") + e.what());
  }
  check_invariants(m);
  return m;
}

void save_model_file(const std::string& path, const HmmModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  save_model(out, model);
}

HmmModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return load_model(in);
}

}  // namespace mvsum::stage
