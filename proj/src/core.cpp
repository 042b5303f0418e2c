#include "parmix/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace parmix {

namespace {

// SplitMix64 finalizer; full-avalanche mix of a 64-bit word.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

Vocab Vocab::plain(int size) {
  Vocab v;
  v.size = size;
  v.validate();
  return v;
}

Vocab Vocab::with_markers(int size) {
  Vocab v;
  v.size = size;
  v.pad = 0;
  v.bos = 1;
  v.sep = 2;
  v.validate();
  return v;
}

void Vocab::validate() const {
  if (size < 2) throw std::invalid_argument("Vocab: size must be >= 2");
  const bool any = pad >= 0 || bos >= 0 || sep >= 0;
  if (!any) return;
  if (pad < 0 || bos < 0 || sep < 0)
    throw std::invalid_argument("Vocab: reserved ids must be all set or all absent");
  if (pad >= size || bos >= size || sep >= size)
    throw std::invalid_argument("Vocab: reserved ids must be < size");
  if (pad == bos || pad == sep || bos == sep)
    throw std::invalid_argument("Vocab: reserved ids must be distinct");
}

void validate_tokens(const TokenSeq& tokens, const Vocab& vocab,
                     const char* what) {
  for (Token t : tokens) {
    if (t < 0 || t >= vocab.size)
      throw std::invalid_argument(std::string(what) +
                                  ": token id out of range for vocab");
  }
}

RngStream make_stream(std::uint64_t seed) { return RngStream{seed, 0, 0}; }

RngStream split_stream(const RngStream& parent, std::uint64_t label) {
  RngStream child;
  child.seed = parent.seed;
  child.stream = mix64(mix64(parent.stream ^ mix64(parent.seed)) ^
                       mix64(label ^ 0xd1b54a32d192ed03ULL));
  child.counter = 0;
  return child;
}

std::uint64_t next_u64(RngStream& stream) {
  const std::uint64_t base = mix64(stream.stream + mix64(stream.seed));
  const std::uint64_t out = mix64(base + stream.counter * kGolden);
  stream.counter += 1;
  return out;
}

double next_double(RngStream& stream) {
  return static_cast<double>(next_u64(stream) >> 11) * 0x1.0p-53;
}

std::uint64_t next_below(RngStream& stream, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("next_below: bound must be > 0");
  return next_u64(stream) % bound;
}

double next_gaussian(RngStream& stream) {
  // Box-Muller, cosine branch. u1 shifted into (0,1] so log stays finite.
  const double u1 = 1.0 - next_double(stream);
  const double u2 = next_double(stream);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Token draw_categorical(RngStream& stream, std::span<const double> probs) {
  if (probs.empty())
    throw std::invalid_argument("draw_categorical: empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0)
      throw std::invalid_argument("draw_categorical: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(
        "draw_categorical: probabilities sum to " + std::to_string(sum));

  const double u = next_double(stream);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<Token>(i);
  }
  // Rounding pushed the cumulative sum below u; return the last index that
  // carries mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<Token>(i);
  }
  return static_cast<Token>(probs.size() - 1);
}

}  // namespace parmix
