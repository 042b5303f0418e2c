#include "parmix/exactdist.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace parmix {

namespace {

std::uint64_t ipow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  while (exp-- > 0) r *= base;
  return r;
}

void check_enumerable(const TabularModel& model, int length) {
  if (length < 1 || length > model.max_len())
    throw std::invalid_argument("exactdist: length out of range for model");
  if (ipow(static_cast<std::uint64_t>(model.vocab().size), length) >
      TabularModel::kMaxSequences)
    throw std::invalid_argument("exactdist: V^T exceeds the enumeration guard");
}

void check_compatible(const SeqDistribution& a, const SeqDistribution& b) {
  if (a.vocab_size != b.vocab_size || a.length != b.length)
    throw std::invalid_argument("distribution shape mismatch");
}

}  // namespace

std::size_t SeqDistribution::encode(std::span<const Token> seq, int vocab_size) {
  std::size_t code = 0;
  for (Token t : seq)
    code = code * static_cast<std::size_t>(vocab_size) + static_cast<std::size_t>(t);
  return code;
}

TokenSeq SeqDistribution::decode(std::size_t code) const {
  TokenSeq seq(static_cast<std::size_t>(length));
  for (int t = length - 1; t >= 0; --t) {
    seq[static_cast<std::size_t>(t)] =
        static_cast<Token>(code % static_cast<std::size_t>(vocab_size));
    code /= static_cast<std::size_t>(vocab_size);
  }
  return seq;
}

SeqDistribution SeqDistribution::prefix_marginal(int prefix_len) const {
  if (prefix_len < 1 || prefix_len > length)
    throw std::invalid_argument("prefix_marginal: bad prefix length");
  SeqDistribution out;
  out.vocab_size = vocab_size;
  out.length = prefix_len;
  const std::size_t block = ipow(static_cast<std::uint64_t>(vocab_size),
                                 length - prefix_len);
  out.probs.assign(probs.size() / block, 0.0);
  // Big-endian encoding keeps each prefix's continuations contiguous.
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < block; ++j) sum += probs[i * block + j];
    out.probs[i] = sum;
  }
  return out;
}

TokenSeq SeqDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return decode(best);
}

void SeqDistribution::validate(double tolerance) const {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::runtime_error("SeqDistribution: negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tolerance)
    throw std::runtime_error("SeqDistribution: entries sum to " +
                             std::to_string(sum));
}

SeqDistribution ancestral(const TabularModel& model, int length) {
  check_enumerable(model, length);
  const int V = model.vocab().size;
  SeqDistribution out;
  out.vocab_size = V;
  out.length = length;
  out.probs.assign(ipow(static_cast<std::uint64_t>(V), length), 0.0);

  TokenSeq prefix;
  prefix.reserve(static_cast<std::size_t>(length));
  // DFS over prefixes; the running product is the prefix probability.
  auto recurse = [&](auto&& self, std::size_t code, double prob) -> void {
    const int t = static_cast<int>(prefix.size());
    const auto row = model.table_row({prefix.data(), prefix.size()});
    for (Token v = 0; v < V; ++v) {
      const double q = prob * row[static_cast<std::size_t>(v)];
      const std::size_t child = code * static_cast<std::size_t>(V) +
                                static_cast<std::size_t>(v);
      if (t + 1 == length) {
        out.probs[child] = q;
      } else {
        prefix.push_back(v);
        self(self, child, q);
        prefix.pop_back();
      }
    }
  };
  recurse(recurse, 0, 1.0);
  return out;
}

SeqDistribution sequential_proposal(const TabularModel& model,
                                    const TokenSeq& gold, double p) {
  const int length = static_cast<int>(gold.size());
  check_enumerable(model, length);
  validate_tokens(gold, model.vocab(), "sequential_proposal gold");
  const int V = model.vocab().size;
  SeqDistribution out;
  out.vocab_size = V;
  out.length = length;
  out.probs.assign(ipow(static_cast<std::uint64_t>(V), length), 0.0);

  TokenSeq prefix;
  prefix.reserve(static_cast<std::size_t>(length));
  auto recurse = [&](auto&& self, std::size_t code, double prob) -> void {
    const int t = static_cast<int>(prefix.size());
    const auto row = model.table_row({prefix.data(), prefix.size()});
    for (Token v = 0; v < V; ++v) {
      const double keep = (v == gold[static_cast<std::size_t>(t)]) ? 1.0 - p : 0.0;
      const double q = prob * (keep + p * row[static_cast<std::size_t>(v)]);
      const std::size_t child = code * static_cast<std::size_t>(V) +
                                static_cast<std::size_t>(v);
      if (t + 1 == length) {
        out.probs[child] = q;
      } else {
        prefix.push_back(v);
        self(self, child, q);
        prefix.pop_back();
      }
    }
  };
  recurse(recurse, 0, 1.0);
  return out;
}

SeqDistribution parallel_proposal(const TabularModel& model,
                                  const TokenSeq& gold, double p, int passes) {
  const int length = static_cast<int>(gold.size());
  check_enumerable(model, length);
  validate_tokens(gold, model.vocab(), "parallel_proposal gold");
  if (passes < 1)
    throw std::invalid_argument("parallel_proposal: passes must be >= 1");
  const int V = model.vocab().size;
  const std::uint64_t n_states = ipow(static_cast<std::uint64_t>(V), length);
  if (n_states * n_states > 100'000'000ULL)
    throw std::invalid_argument("parallel_proposal: V^2T exceeds the work guard");

  SeqDistribution dist;
  dist.vocab_size = V;
  dist.length = length;
  dist.probs.assign(n_states, 0.0);
  dist.probs[SeqDistribution::encode(gold, V)] = 1.0;  // y~_0 = gold

  std::vector<double> next(n_states);
  // Per pass, the transition from a fixed source factorizes across target
  // positions because every conditional looks at the *source* prefix. Stream
  // over source states; never materialize the V^T x V^T kernel.
  for (int k = 1; k <= passes; ++k) {
    std::fill(next.begin(), next.end(), 0.0);
    const int copied = std::min(k - 1, length);  // positions 1..k-1 are frozen
    const int free_len = length - copied;
    for (std::size_t src = 0; src < n_states; ++src) {
      const double mass = dist.probs[src];
      if (mass == 0.0) continue;
      const TokenSeq source = dist.decode(src);

      // factor[t][v] for the non-copied positions t = copied..length-1.
      std::vector<std::vector<double>> factor(
          static_cast<std::size_t>(free_len));
      for (int t = copied; t < length; ++t) {
        const auto row = model.table_row(
            {source.data(), static_cast<std::size_t>(t)});
        auto& f = factor[static_cast<std::size_t>(t - copied)];
        f.resize(static_cast<std::size_t>(V));
        for (Token v = 0; v < V; ++v) {
          const double keep =
              (v == gold[static_cast<std::size_t>(t)]) ? 1.0 - p : 0.0;
          f[static_cast<std::size_t>(v)] =
              keep + p * row[static_cast<std::size_t>(v)];
        }
      }

      const std::size_t base = src / ipow(static_cast<std::uint64_t>(V), free_len);
      auto recurse = [&](auto&& self, int t, std::size_t code, double prob) -> void {
        if (t == free_len) {
          next[code] += mass * prob;
          return;
        }
        const auto& f = factor[static_cast<std::size_t>(t)];
        for (Token v = 0; v < V; ++v) {
          const double q = prob * f[static_cast<std::size_t>(v)];
          if (q == 0.0) continue;
          self(self, t + 1, code * static_cast<std::size_t>(V) +
                                static_cast<std::size_t>(v), q);
        }
      };
      recurse(recurse, 0, base, 1.0);
    }
    dist.probs.swap(next);
  }
  return dist;
}

double tv_distance(const SeqDistribution& a, const SeqDistribution& b) {
  check_compatible(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    sum += std::abs(a.probs[i] - b.probs[i]);
  return 0.5 * sum;
}

double kl_divergence(const SeqDistribution& a, const SeqDistribution& b) {
  check_compatible(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i) {
    if (a.probs[i] <= 0.0) continue;
    if (b.probs[i] <= 0.0)
      throw std::domain_error(
          "kl_divergence: support mismatch (a positive where b is zero)");
    sum += a.probs[i] * std::log(a.probs[i] / b.probs[i]);
  }
  // Guard against rounding pushing a near-equal pair slightly negative.
  if (sum < 0.0 && sum > -1e-12) sum = 0.0;
  return sum;
}

TheoremReport verify_theorem(const TabularModel& model, const TokenSeq& gold,
                             int length, double tolerance) {
  TheoremReport report;
  report.vocab_size = model.vocab().size;
  report.length = length;
  report.tolerance = tolerance;

  const SeqDistribution exact = ancestral(model, length);
  bool ok = true;
  for (int k = 1; k <= length + 2; ++k) {
    const SeqDistribution q = parallel_proposal(model, gold, 1.0, k);
    TheoremReport::Entry entry;
    entry.passes = k;
    entry.tv = tv_distance(q, exact);
    const int frozen = std::min(k, length);
    for (int m = 1; m <= frozen; ++m) {
      entry.prefix_marginal_err = std::max(
          entry.prefix_marginal_err,
          tv_distance(q.prefix_marginal(m), exact.prefix_marginal(m)));
    }
    if (k >= length && entry.tv > tolerance) ok = false;
    if (entry.prefix_marginal_err > tolerance) ok = false;
    report.entries.push_back(entry);
  }
  report.pass = ok;
  return report;
}

std::string TheoremReport::to_string() const {
  std::ostringstream os;
  os << "V=" << vocab_size << " T=" << length << " p=1\n";
  for (const auto& e : entries) {
    os << "  K=" << e.passes << "  tv=" << e.tv
       << "  prefix_marginal_err=" << e.prefix_marginal_err
       << (e.passes >= length ? "  [K>=T]" : "") << "\n";
  }
  os << (pass ? "PASS" : "FAIL") << " (tolerance " << tolerance << ")\n";
  return os.str();
}

std::vector<SweepRow> proposal_sweep(const TabularModel& model,
                                     const TokenSeq& gold,
                                     const std::vector<double>& p_grid,
                                     const std::vector<int>& pass_grid) {
  const int length = static_cast<int>(gold.size());
  const SeqDistribution exact = ancestral(model, length);
  std::vector<SweepRow> rows;
  rows.reserve(p_grid.size() * pass_grid.size());
  for (double p : p_grid) {
    for (int k : pass_grid) {
      const SeqDistribution q = parallel_proposal(model, gold, p, k);
      rows.push_back({p, k, tv_distance(q, exact), kl_divergence(q, exact)});
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "p,K,tv,kl\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%d,%.17g,%.17g\n", r.p, r.passes,
                  r.tv, r.kl);
    os << buf;
  }
}

}  // namespace parmix
