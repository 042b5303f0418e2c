#include "parmix/tabular.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace parmix {

namespace {

std::uint64_t checked_pow(std::uint64_t base, int exp, std::uint64_t limit) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (r > limit / base) return limit + 1;
    r *= base;
  }
  return r;
}

// Marsaglia-Tsang gamma sampler; alpha < 1 boosted through Gamma(alpha+1).
double sample_gamma(RngStream& stream, double alpha) {
  if (alpha < 1.0) {
    double u = next_double(stream);
    if (u <= 0.0) u = 0x1.0p-53;
    return sample_gamma(stream, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / (3.0 * std::sqrt(d));
  for (;;) {
    const double x = next_gaussian(stream);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = next_double(stream);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u <= 0.0) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

TabularModel::TabularModel(const Vocab& vocab, int max_len)
    : vocab_(vocab), max_len_(max_len) {
  vocab_.validate();
  if (max_len < 1)
    throw std::invalid_argument("TabularModel: max_len must be >= 1");
  const auto V = static_cast<std::uint64_t>(vocab_.size);
  if (checked_pow(V, max_len, kMaxSequences) > kMaxSequences)
    throw std::invalid_argument(
        "TabularModel: V^max_len exceeds the enumeration guard");

  offsets_.resize(static_cast<std::size_t>(max_len) + 1);
  offsets_[0] = 0;
  std::uint64_t count = 1;
  for (int t = 0; t < max_len; ++t) {
    offsets_[static_cast<std::size_t>(t) + 1] = offsets_[t] + count;
    count *= V;
  }
  tables_.assign(num_rows() * V, 0.0);
}

TabularModel TabularModel::from_tables(const Vocab& vocab, int max_len,
                                       std::vector<std::vector<double>> rows) {
  TabularModel m(vocab, max_len);
  if (rows.size() != m.num_rows())
    throw std::invalid_argument("TabularModel: expected " +
                                std::to_string(m.num_rows()) + " rows, got " +
                                std::to_string(rows.size()));
  const auto V = static_cast<std::size_t>(vocab.size);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != V)
      throw std::invalid_argument("TabularModel: row of wrong width");
    double sum = 0.0;
    for (double p : rows[r]) {
      if (p < 0.0) throw std::invalid_argument("TabularModel: negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("TabularModel: row does not sum to 1");
    for (std::size_t v = 0; v < V; ++v) m.tables_[r * V + v] = rows[r][v] / sum;
  }
  return m;
}

std::size_t TabularModel::row_index(std::span<const Token> prefix) const {
  const int t = static_cast<int>(prefix.size());
  if (t >= max_len_)
    throw std::invalid_argument("TabularModel: prefix at or beyond max_len");
  std::size_t code = 0;
  for (Token tok : prefix) {
    if (tok < 0 || tok >= vocab_.size)
      throw std::invalid_argument("TabularModel: token id out of range");
    code = code * static_cast<std::size_t>(vocab_.size) +
           static_cast<std::size_t>(tok);
  }
  return offsets_[static_cast<std::size_t>(t)] + code;
}

std::span<const double> TabularModel::table_row(
    std::span<const Token> prefix) const {
  const auto V = static_cast<std::size_t>(vocab_.size);
  return {tables_.data() + row_index(prefix) * V, V};
}

int TabularModel::max_conditioning_len(int context_len) const {
  return context_len == 0 ? max_len_ : 0;
}

std::optional<Token> TabularModel::end_token() const {
  if (vocab_.has_markers()) return vocab_.sep;
  return std::nullopt;
}

LogitMatrix TabularModel::conditional_logits(const TokenSeq& conditioning,
                                             const TokenSeq& context) const {
  if (!context.empty())
    throw std::invalid_argument("TabularModel: context must be empty");
  const int T = static_cast<int>(conditioning.size());
  if (T < 1 || T > max_len_)
    throw std::invalid_argument("TabularModel: conditioning length out of range");
  LogitMatrix out(T, vocab_.size);
  for (int t = 0; t < T; ++t) {
    const auto row = table_row({conditioning.data(), static_cast<std::size_t>(t)});
    auto dst = out.row(t);
    for (int v = 0; v < vocab_.size; ++v) dst[v] = std::log(row[v]);
  }
  return out;
}

LogitRow TabularModel::next_logits(const TokenSeq& prefix,
                                   const TokenSeq& context) const {
  if (!context.empty())
    throw std::invalid_argument("TabularModel: context must be empty");
  const auto row = table_row({prefix.data(), prefix.size()});
  LogitRow out(vocab_.size);
  for (int v = 0; v < vocab_.size; ++v) out[v] = std::log(row[v]);
  return out;
}

TabularModel tabular_random(const Vocab& vocab, int max_len,
                            double concentration, RngStream stream) {
  if (concentration <= 0.0)
    throw std::invalid_argument("tabular_random: concentration must be > 0");
  TabularModel m(vocab, max_len);
  const auto V = static_cast<std::size_t>(vocab.size);
  const std::size_t rows = m.num_rows();
  for (std::size_t r = 0; r < rows; ++r) {
    RngStream row_stream = split_stream(split_stream(stream, rng_label::kTable),
                                        static_cast<std::uint64_t>(r));
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double g = sample_gamma(row_stream, concentration);
      m.tables_[r * V + v] = g;
      sum += g;
    }
    for (std::size_t v = 0; v < V; ++v) m.tables_[r * V + v] /= sum;
  }
  return m;
}

}  // namespace parmix
