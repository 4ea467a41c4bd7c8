#include "lightpeft/data.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>

#include "lightpeft/errors.hpp"
#include "lightpeft/rng.hpp"

namespace lightpeft {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::parity: return "parity";
    case TaskKind::majority: return "majority";
    case TaskKind::pattern_match: return "pattern-match";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "parity") return TaskKind::parity;
  if (text == "majority") return TaskKind::majority;
  if (text == "pattern-match" || text == "pattern_match") return TaskKind::pattern_match;
  throw ConfigError("unknown task '" + text + "' (expected parity, majority or pattern-match)");
}

void TaskSpec::validate() const {
  if (train_size == 0 || eval_size == 0) throw ConfigError("train_size and eval_size must be at least 1");
  if (seq_len == 0) throw ConfigError("seq_len must be positive");
  switch (kind) {
    case TaskKind::parity:
      if (vocab_size < 2) throw ConfigError("parity needs a vocabulary of at least 2 tokens");
      if (num_classes != 2) throw ConfigError("parity is a 2-class task");
      break;
    case TaskKind::majority:
      if (num_classes < 2) throw ConfigError("majority needs at least 2 classes");
      if (vocab_size < num_classes) throw ConfigError("majority needs vocab_size >= num_classes");
      break;
    case TaskKind::pattern_match:
      if (vocab_size < 4) throw ConfigError("pattern-match needs a vocabulary of at least 4 tokens (motif 1,2,3)");
      if (num_classes != 2) throw ConfigError("pattern-match is a 2-class task");
      if (seq_len < 3) throw ConfigError("pattern-match needs seq_len >= 3");
      break;
  }
}

namespace {

bool has_motif(std::span<const int> tokens) {
  for (std::size_t i = 0; i + 3 <= tokens.size(); ++i) {
    if (tokens[i] == kMotif[0] && tokens[i + 1] == kMotif[1] && tokens[i + 2] == kMotif[2]) return true;
  }
  return false;
}

// Returns -1 on a tie for the top class.
int majority_strict(std::span<const int> tokens, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (int t : tokens) ++counts[static_cast<std::size_t>(t) % classes];
  const auto top = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *top) > 1) return -1;
  return static_cast<int>(top - counts.begin());
}

constexpr std::size_t kParityMaxOnes = 3;

int draw_other(Rng& rng, std::size_t vocab, int excluded) {
  int t = excluded;
  while (t == excluded) t = static_cast<int>(rng.below(vocab));
  return t;
}

std::vector<int> sample_sequence(const TaskSpec& spec, int target, Rng& rng) {
  const std::size_t n = spec.seq_len;
  std::vector<int> seq(n);
  switch (spec.kind) {
    case TaskKind::parity: {
      // Number of ones drawn from {0..kParityMaxOnes} with the target parity.
      std::vector<std::size_t> counts;
      for (std::size_t k = static_cast<std::size_t>(target); k <= std::min(kParityMaxOnes, n); k += 2) {
        counts.push_back(k);
      }
      const std::size_t ones = counts[rng.below(counts.size())];
      for (int& t : seq) t = draw_other(rng, spec.vocab_size, 1);
      std::vector<std::size_t> pos(n);
      std::iota(pos.begin(), pos.end(), 0);
      rng.shuffle(std::span<std::size_t>(pos));
      for (std::size_t i = 0; i < ones; ++i) seq[pos[i]] = 1;
      break;
    }
    case TaskKind::majority: {
      const std::size_t classes = spec.num_classes;
      const std::size_t per_class = (spec.vocab_size - static_cast<std::size_t>(target) + classes - 1) / classes;
      for (int& t : seq) {
        if (rng.uniform() < 0.5) {
          t = target + static_cast<int>(classes * rng.below(per_class));
        } else {
          t = static_cast<int>(rng.below(spec.vocab_size));
        }
      }
      break;
    }
    case TaskKind::pattern_match: {
      for (int& t : seq) t = static_cast<int>(rng.below(spec.vocab_size));
      if (target == 1) {
        const std::size_t at = rng.below(n - 2);
        for (std::size_t i = 0; i < 3; ++i) seq[at + i] = kMotif[i];
      }
      break;
    }
  }
  return seq;
}

std::string key_of(const std::vector<int>& seq) {
  return std::string(reinterpret_cast<const char*>(seq.data()), seq.size() * sizeof(int));
}

Dataset make_split(const TaskSpec& spec, std::size_t size, Rng& rng, std::unordered_set<std::string>& seen) {
  Dataset ds;
  ds.seq_len = spec.seq_len;
  ds.tokens.reserve(size * spec.seq_len);
  const std::size_t max_attempts = 1000 * (size + 10);
  std::size_t attempts = 0;
  for (std::size_t i = 0; i < size; ++i) {
    const int target = static_cast<int>(i % spec.num_classes);
    while (true) {
      if (++attempts > max_attempts) {
        throw ConfigError("could not generate " + std::to_string(size) + " distinct " + to_string(spec.kind) +
                          " samples; enlarge vocab_size or seq_len");
      }
      std::vector<int> seq = sample_sequence(spec, target, rng);
      const int label = spec.kind == TaskKind::majority ? majority_strict(seq, spec.num_classes)
                                                        : label_for(spec, seq);
      if (label != target) continue;
      if (!seen.insert(key_of(seq)).second) continue;
      ds.tokens.insert(ds.tokens.end(), seq.begin(), seq.end());
      ds.labels.push_back(label);
      break;
    }
  }
  // Interleaved targets are shuffled so file order carries no label pattern.
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  Dataset shuffled;
  shuffled.seq_len = ds.seq_len;
  for (std::size_t i : order) {
    auto s = ds.sequence(i);
    shuffled.tokens.insert(shuffled.tokens.end(), s.begin(), s.end());
    shuffled.labels.push_back(ds.labels[i]);
  }
  return shuffled;
}

}  // namespace

int label_for(const TaskSpec& spec, std::span<const int> tokens) {
  switch (spec.kind) {
    case TaskKind::parity:
      return static_cast<int>(std::count(tokens.begin(), tokens.end(), 1) % 2);
    case TaskKind::majority: {
      std::vector<std::size_t> counts(spec.num_classes, 0);
      for (int t : tokens) ++counts[static_cast<std::size_t>(t) % spec.num_classes];
      return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    case TaskKind::pattern_match:
      return has_motif(tokens) ? 1 : 0;
  }
  return 0;
}

TokenBatch Dataset::gather(std::span<const std::size_t> rows) const {
  TokenBatch b;
  b.batch = rows.size();
  b.seq = seq_len;
  b.tokens.reserve(rows.size() * seq_len);
  for (std::size_t r : rows) {
    auto s = sequence(r);
    b.tokens.insert(b.tokens.end(), s.begin(), s.end());
    b.labels.push_back(labels.at(r));
  }
  return b;
}

TokenBatch Dataset::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return gather(rows);
}

TaskData generate(const TaskSpec& spec) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed, 0xda7a));
  std::unordered_set<std::string> seen;
  TaskData out;
  out.train = make_split(spec, spec.train_size, rng, seen);
  out.eval = make_split(spec, spec.eval_size, rng, seen);
  return out;
}

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
}

std::vector<std::vector<std::size_t>> BatchStream::epoch(std::size_t index) const {
  std::vector<std::size_t> order(data_->size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed_, index));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + batch_size_ <= order.size(); b += batch_size_) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(b + batch_size_));
  }
  return batches;
}

TokenBatch BatchStream::next() {
  if (batches_per_epoch() == 0) {
    throw DataError("dataset of " + std::to_string(data_->size()) + " samples is smaller than one batch of " +
                    std::to_string(batch_size_));
  }
  if (cursor_ >= current_.size()) {
    current_ = epoch(epoch_++);
    cursor_ = 0;
  }
  return data_->gather(current_[cursor_++]);
}

void export_lines(const Dataset& data, std::ostream& out) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i] << '\t';
    auto s = data.sequence(i);
    for (std::size_t j = 0; j < s.size(); ++j) out << (j ? " " : "") << s[j];
    out << '\n';
  }
}

}  // namespace lightpeft
