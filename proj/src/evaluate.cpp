#include <algorithm>
#include <stdexcept>

#include "parmix/harness.hpp"
#include "parmix/sstrain.hpp"

namespace parmix {

DecoderSpec DecoderSpec::parse(const std::string& name) {
  DecoderSpec spec;
  if (name == "greedy") {
    spec.kind = Kind::kGreedy;
  } else if (name == "sample") {
    spec.kind = Kind::kSample;
  } else if (name.rfind("beam", 0) == 0) {
    spec.kind = Kind::kBeam;
    if (name.size() > 5 && name[4] == '-')
      spec.beam_width = std::stoi(name.substr(5));
    else if (name != "beam")
      throw std::invalid_argument("unknown decoder: " + name);
  } else {
    throw std::invalid_argument("unknown decoder: " + name);
  }
  return spec;
}

std::string DecoderSpec::to_string() const {
  switch (kind) {
    case Kind::kGreedy: return "greedy";
    case Kind::kSample: return "sample";
    case Kind::kBeam: return "beam-" + std::to_string(beam_width);
  }
  return "?";
}

int levenshtein(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

EvalMetrics evaluate(const ModelInterface& model,
                     const std::vector<Example>& examples,
                     const DecoderSpec& decoder) {
  EvalMetrics out;
  if (examples.empty()) return out;

  const RngStream base = split_stream(make_stream(decoder.seed), rng_label::kDecode);
  std::int64_t matched = 0;
  std::int64_t gold_total = 0;
  std::int64_t exact = 0;
  std::int64_t edit_total = 0;

  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    // Predictions capped at twice the gold length.
    const int max_len = 2 * static_cast<int>(ex.target.size());
    TokenSeq pred;
    switch (decoder.kind) {
      case DecoderSpec::Kind::kGreedy:
        pred = decode_greedy(model, ex.input, max_len);
        break;
      case DecoderSpec::Kind::kSample:
        pred = decode_sample(model, ex.input, max_len,
                             split_stream(base, static_cast<std::uint64_t>(i)));
        break;
      case DecoderSpec::Kind::kBeam:
        pred = decode_beam(model, ex.input, decoder.beam_width, max_len);
        break;
    }

    const std::size_t overlap = std::min(pred.size(), ex.target.size());
    for (std::size_t t = 0; t < overlap; ++t)
      matched += pred[t] == ex.target[t] ? 1 : 0;
    gold_total += static_cast<std::int64_t>(ex.target.size());
    exact += pred == ex.target ? 1 : 0;
    edit_total += levenshtein(pred, ex.target);
  }

  out.token_accuracy = static_cast<double>(matched) / gold_total;
  out.exact_match = static_cast<double>(exact) / examples.size();
  out.mean_edit_distance = static_cast<double>(edit_total) / examples.size();
  return out;
}

}  // namespace parmix
