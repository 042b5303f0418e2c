#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace parmix {

using Token = std::int32_t;

/// A finite sequence of dense token ids. Empty sequences are allowed only as
/// the input side of an unconditional Example.
using TokenSeq = std::vector<Token>;

/// Token alphabet: ids are dense integers 0..size-1. The reserved marker ids
/// (pad/bos/sep) are optional; enumeration-oriented vocabularies (tabular
/// models) omit them, trainable models require them.
struct Vocab {
  int size = 0;
  Token pad = -1;
  Token bos = -1;
  Token sep = -1;

  bool has_markers() const { return pad >= 0; }
  /// First token id usable as task data (after the reserved block).
  Token first_data_token() const { return has_markers() ? sep + 1 : 0; }
  int num_data_tokens() const { return size - first_data_token(); }

  static Vocab plain(int size);
  static Vocab with_markers(int size);  // pad=0, bos=1, sep=2
  void validate() const;
};

/// One training pair. `input` may be empty (unconditional generation).
struct Example {
  TokenSeq input;
  TokenSeq target;
};

void validate_tokens(const TokenSeq& tokens, const Vocab& vocab,
                     const char* what);

// ---------------------------------------------------------------------------
// Counter-based splittable randomness.
//
// A stream is the value (seed, stream id, counter); draw n is a pure function
// of those three integers, so replaying a copied stream reproduces outputs
// bitwise and sampling sites can be given independent streams regardless of
// evaluation order.
// ---------------------------------------------------------------------------

struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

RngStream make_stream(std::uint64_t seed);

/// Child stream deterministic in (parent.seed, parent.stream, label) and
/// statistically independent of the parent for non-colliding labels. The
/// parent's counter does not participate: splitting is repeatable.
RngStream split_stream(const RngStream& parent, std::uint64_t label);

/// Next raw draw; advances the counter by exactly one.
std::uint64_t next_u64(RngStream& stream);

/// Uniform in [0, 1), 53-bit resolution; one counter advance.
double next_double(RngStream& stream);

/// Uniform integer in [0, bound); one counter advance.
std::uint64_t next_below(RngStream& stream, std::uint64_t bound);

/// Standard normal via Box-Muller; advances the counter by exactly two.
double next_gaussian(RngStream& stream);

/// Samples index i with probability probs[i]; advances the counter by exactly
/// one. Rejects negative entries and sums deviating from 1 by more than 1e-9.
Token draw_categorical(RngStream& stream, std::span<const double> probs);

// Purpose labels for split_stream. Every sampling site derives its stream
// from (seed, purpose, example index, pass index, position), which keeps
// results independent of intra-pass evaluation order.
namespace rng_label {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kSample = 2;
inline constexpr std::uint64_t kCoin = 3;
inline constexpr std::uint64_t kBatch = 4;
inline constexpr std::uint64_t kExample = 5;
inline constexpr std::uint64_t kDecode = 6;
inline constexpr std::uint64_t kTask = 7;
inline constexpr std::uint64_t kGold = 8;
inline constexpr std::uint64_t kTable = 9;
}  // namespace rng_label

}  // namespace parmix
