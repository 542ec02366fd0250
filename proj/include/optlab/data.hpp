#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/model.hpp"
#include "optlab/rng.hpp"

namespace optlab {

struct Corpus {
  std::vector<int32_t> tokens;
  int64_t vocab_size = 0;
  std::string provenance;
  uint64_t content_hash = 0;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("Corpus: vocab_size must be >= 2");
    for (int32_t t : tokens) {
      if (t < 0 || t >= vocab_size) {
        throw IndexError("Corpus: token " + std::to_string(t) + " out of range");
      }
    }
  }
};

inline uint64_t token_hash(const std::vector<int32_t>& tokens) {
  return fnv1a(tokens.data(), tokens.size() * sizeof(int32_t));
}

// Seeded Markov source. Transition rows are drawn once from a symmetric
// Dirichlet; the chain is then sampled autoregressively. Everything is a
// pure function of the spec.
struct SyntheticSpec {
  int64_t vocab_size = 256;
  int markov_order = 1;
  double concentration = 0.1;
  uint64_t seed = 42;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("SyntheticSpec: vocab_size must be >= 2");
    if (markov_order != 1 && markov_order != 2) {
      throw ConfigError("SyntheticSpec: markov_order must be 1 or 2");
    }
    if (concentration <= 0.0) throw ConfigError("SyntheticSpec: concentration must be positive");
  }

  int64_t num_states() const {
    return markov_order == 1 ? vocab_size : vocab_size * vocab_size;
  }
};

struct MarkovTable {
  int64_t vocab = 0;
  int markov_order = 1;
  std::vector<double> probs;  // [states x vocab], rows sum to 1

  double prob(int64_t state, int64_t next) const {
    return probs[static_cast<size_t>(state * vocab + next)];
  }
};

inline MarkovTable build_markov_table(const SyntheticSpec& spec) {
  spec.validate();
  MarkovTable table;
  table.vocab = spec.vocab_size;
  table.markov_order = spec.markov_order;
  const int64_t states = spec.num_states();
  table.probs.resize(static_cast<size_t>(states * spec.vocab_size));
  Rng rng(Rng::mix(spec.seed, 0x7ab1e));
  for (int64_t s = 0; s < states; ++s) {
    double* row = table.probs.data() + s * spec.vocab_size;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t v = 0; v < spec.vocab_size; ++v) {
      row[v] = rng.next_log_gamma(spec.concentration);
      mx = std::max(mx, row[v]);
    }
    double sum = 0.0;
    for (int64_t v = 0; v < spec.vocab_size; ++v) {
      row[v] = std::exp(row[v] - mx);
      sum += row[v];
    }
    for (int64_t v = 0; v < spec.vocab_size; ++v) row[v] /= sum;
  }
  return table;
}

namespace detail {

inline int64_t sample_row(const double* row, int64_t vocab, double u) {
  double cum = 0.0;
  for (int64_t v = 0; v < vocab; ++v) {
    cum += row[v];
    if (u < cum) return v;
  }
  return vocab - 1;
}

}  // namespace detail

inline Corpus generate_markov(const SyntheticSpec& spec, int64_t n_tokens) {
  spec.validate();
  if (n_tokens <= spec.markov_order) {
    throw SizingError("generate_markov: n_tokens must exceed the markov order");
  }
  const MarkovTable table = build_markov_table(spec);
  Corpus corpus;
  corpus.vocab_size = spec.vocab_size;
  corpus.provenance = "synthetic(vocab=" + std::to_string(spec.vocab_size) +
                      ",order=" + std::to_string(spec.markov_order) +
                      ",concentration=" + std::to_string(spec.concentration) +
                      ",seed=" + std::to_string(spec.seed) + ")";
  corpus.tokens.reserve(static_cast<size_t>(n_tokens));
  Rng rng(Rng::mix(spec.seed, 0x5a3c1e));
  for (int i = 0; i < spec.markov_order; ++i) {
    corpus.tokens.push_back(static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(spec.vocab_size))));
  }
  while (static_cast<int64_t>(corpus.tokens.size()) < n_tokens) {
    int64_t state;
    const size_t n = corpus.tokens.size();
    if (spec.markov_order == 1) {
      state = corpus.tokens[n - 1];
    } else {
      state = static_cast<int64_t>(corpus.tokens[n - 2]) * spec.vocab_size + corpus.tokens[n - 1];
    }
    const double* row = table.probs.data() + state * spec.vocab_size;
    corpus.tokens.push_back(
        static_cast<int32_t>(detail::sample_row(row, spec.vocab_size, rng.next_double())));
  }
  corpus.content_hash = token_hash(corpus.tokens);
  return corpus;
}

// Exact conditional entropy (nats/token) of a transition table under its
// stationary distribution. The stationary distribution comes from power
// iteration to 1e-12; this is the minimum NLL any predictor can reach on
// the source, used as the training-quality oracle.
inline double table_entropy_floor(const MarkovTable& table) {
  const int64_t vocab = table.vocab;
  const int64_t states =
      table.markov_order == 1 ? vocab : vocab * vocab;
  std::vector<double> pi(static_cast<size_t>(states), 1.0 / static_cast<double>(states));
  std::vector<double> next(static_cast<size_t>(states), 0.0);
  const int64_t max_iters = 200000;
  double delta = 1.0;
  for (int64_t it = 0; it < max_iters && delta > 1e-12; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int64_t s = 0; s < states; ++s) {
      const double ps = pi[static_cast<size_t>(s)];
      if (ps == 0.0) continue;
      const double* row = table.probs.data() + s * vocab;
      for (int64_t v = 0; v < vocab; ++v) {
        // successor state: drop the oldest symbol, append v
        const int64_t succ =
            table.markov_order == 1 ? v : (s % vocab) * vocab + v;
        next[static_cast<size_t>(succ)] += ps * row[v];
      }
    }
    double sum = 0.0;
    for (double p : next) sum += p;
    delta = 0.0;
    for (int64_t s = 0; s < states; ++s) {
      next[static_cast<size_t>(s)] /= sum;
      delta = std::max(delta, std::abs(next[static_cast<size_t>(s)] - pi[static_cast<size_t>(s)]));
    }
    pi.swap(next);
  }
  if (delta > 1e-12) throw NumericError("entropy_floor: power iteration did not converge");
  double entropy = 0.0;
  for (int64_t s = 0; s < states; ++s) {
    const double* row = table.probs.data() + s * vocab;
    double h = 0.0;
    for (int64_t v = 0; v < vocab; ++v) {
      if (row[v] > 0.0) h -= row[v] * std::log(row[v]);
    }
    entropy += pi[static_cast<size_t>(s)] * h;
  }
  return entropy;
}

inline double entropy_floor(const SyntheticSpec& spec) {
  return table_entropy_floor(build_markov_table(spec));
}

// Byte-level ingestion: every byte is a token, vocab 256.
inline Corpus load_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_text: cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError("load_text: '" + path + "' is empty");
  Corpus corpus;
  corpus.vocab_size = 256;
  corpus.provenance = "text(" + path + ")";
  corpus.tokens.reserve(bytes.size());
  for (char b : bytes) corpus.tokens.push_back(static_cast<int32_t>(static_cast<unsigned char>(b)));
  corpus.content_hash = token_hash(corpus.tokens);
  return corpus;
}

enum class DataRegime { kUnique, kRepeated };

// Deterministic batch planning over non-overlapping context windows
// (stride = context_length). The final validation_fraction of the corpus is
// held out and never trained on.
struct BatchPlan {
  int64_t context_length = 128;
  int64_t batch_tokens = 8192;  // must be a multiple of context_length
  DataRegime regime = DataRegime::kUnique;
  int64_t epochs = 1;
  uint64_t shuffle_seed = 42;
  double validation_fraction = 0.1;
  bool reshuffle_per_epoch = true;

  void validate() const {
    if (context_length <= 0) throw ConfigError("BatchPlan: context_length must be positive");
    if (batch_tokens <= 0 || batch_tokens % context_length != 0) {
      throw ConfigError("BatchPlan: batch_tokens must be a positive multiple of context_length");
    }
    if (regime == DataRegime::kUnique && epochs != 1) {
      throw ConfigError("BatchPlan: unique regime implies a single epoch");
    }
    if (epochs < 1) throw ConfigError("BatchPlan: epochs must be >= 1");
    if (validation_fraction <= 0.0 || validation_fraction >= 0.5) {
      throw ConfigError("BatchPlan: validation_fraction must be in (0, 0.5)");
    }
  }
};

// Pure function of (corpus, plan): window w covers inputs
// [w*T, w*T + T) with targets shifted by one, so it needs T+1 tokens.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, const BatchPlan& plan) : corpus_(&corpus), plan_(plan) {
    plan.validate();
    const int64_t n = static_cast<int64_t>(corpus.tokens.size());
    const int64_t t = plan.context_length;
    val_start_ = n - static_cast<int64_t>(std::floor(plan.validation_fraction * static_cast<double>(n)));
    train_windows_ = (val_start_ - 1) / t;  // window w needs tokens up to w*T + T <= val_start - 1
    val_windows_ = val_start_ < n ? (n - val_start_ - 1) / t : 0;
    windows_per_batch_ = plan.batch_tokens / t;
    batches_per_epoch_ = train_windows_ / windows_per_batch_;
    if (batches_per_epoch_ < 1) {
      throw SizingError("BatchStream: corpus too small for one batch plus the validation slice");
    }
    if (val_windows_ < 1) {
      throw SizingError("BatchStream: validation slice smaller than one window");
    }
  }

  int64_t total_steps() const { return batches_per_epoch_ * plan_.epochs; }
  int64_t batches_per_epoch() const { return batches_per_epoch_; }
  int64_t train_windows() const { return train_windows_; }
  int64_t windows_per_batch() const { return windows_per_batch_; }
  // Tokens consumed by one pass over the planned batches.
  int64_t tokens_per_epoch() const { return batches_per_epoch_ * plan_.batch_tokens; }
  int64_t total_tokens() const { return tokens_per_epoch() * plan_.epochs; }

  TokenBatch batch(int64_t step) const {
    if (step < 0 || step >= total_steps()) {
      throw IndexError("BatchStream: step " + std::to_string(step) + " out of range");
    }
    const int64_t epoch = step / batches_per_epoch_;
    const int64_t within = step % batches_per_epoch_;
    const std::vector<int64_t>& perm = epoch_permutation(epoch);
    const int64_t t = plan_.context_length;
    TokenBatch b;
    b.batch_size = windows_per_batch_;
    b.seq_len = t;
    b.inputs.reserve(static_cast<size_t>(b.batch_size * t));
    b.targets.reserve(static_cast<size_t>(b.batch_size * t));
    for (int64_t i = 0; i < windows_per_batch_; ++i) {
      const int64_t w = perm[static_cast<size_t>(within * windows_per_batch_ + i)];
      const int32_t* src = corpus_->tokens.data() + w * t;
      b.inputs.insert(b.inputs.end(), src, src + t);
      b.targets.insert(b.targets.end(), src + 1, src + t + 1);
    }
    return b;
  }

  // The held-out slice, chunked into batches of at most the training batch
  // size. Fixed across all runs on the same (corpus, plan).
  std::vector<TokenBatch> validation_batches() const {
    const int64_t t = plan_.context_length;
    std::vector<TokenBatch> out;
    int64_t w = 0;
    while (w < val_windows_) {
      const int64_t take = std::min(windows_per_batch_, val_windows_ - w);
      TokenBatch b;
      b.batch_size = take;
      b.seq_len = t;
      for (int64_t i = 0; i < take; ++i) {
        const int32_t* src = corpus_->tokens.data() + val_start_ + (w + i) * t;
        b.inputs.insert(b.inputs.end(), src, src + t);
        b.targets.insert(b.targets.end(), src + 1, src + t + 1);
      }
      out.push_back(std::move(b));
      w += take;
    }
    return out;
  }

  int64_t validation_start() const { return val_start_; }

 private:
  const std::vector<int64_t>& epoch_permutation(int64_t epoch) const {
    if (epoch != cached_epoch_) {
      // only the first batches * windows_per_batch windows participate, so
      // the trained window set does not depend on the shuffle seed
      const int64_t usable = batches_per_epoch_ * windows_per_batch_;
      const int64_t source_epoch = plan_.reshuffle_per_epoch ? epoch : 0;
      perm_.resize(static_cast<size_t>(usable));
      for (int64_t i = 0; i < usable; ++i) perm_[static_cast<size_t>(i)] = i;
      Rng rng(plan_.shuffle_seed + static_cast<uint64_t>(source_epoch));
      rng.shuffle(perm_);
      cached_epoch_ = epoch;
    }
    return perm_;
  }

  const Corpus* corpus_;
  BatchPlan plan_;
  int64_t val_start_ = 0;
  int64_t train_windows_ = 0;
  int64_t val_windows_ = 0;
  int64_t windows_per_batch_ = 0;
  int64_t batches_per_epoch_ = 0;
  mutable std::vector<int64_t> perm_;
  mutable int64_t cached_epoch_ = -1;
};

}  // namespace optlab
