#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lightpeft/batch.hpp"

namespace lightpeft {

enum class TaskKind { parity, majority, pattern_match };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

// Label rules:
//   parity        (number of token 1 in the sequence) mod 2
//   majority      most frequent token class, class(t) = t mod num_classes
//                 (ties resolve to the lowest class; the generator avoids them)
//   pattern_match 1 if the motif 1,2,3 occurs contiguously, else 0
struct TaskSpec {
  TaskKind kind = TaskKind::parity;
  std::size_t vocab_size = 32;
  std::size_t seq_len = 32;
  std::size_t num_classes = 2;
  std::size_t train_size = 2048;
  std::size_t eval_size = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kMotif[3] = {1, 2, 3};

// The closed-form rule above, applied to one sequence.
int label_for(const TaskSpec& spec, std::span<const int> tokens);

struct Dataset {
  std::size_t seq_len = 0;
  std::vector<int> tokens;  // [size, seq_len]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const int> sequence(std::size_t i) const {
    return std::span<const int>(tokens).subspan(i * seq_len, seq_len);
  }
  TokenBatch gather(std::span<const std::size_t> rows) const;
  TokenBatch slice(std::size_t begin, std::size_t end) const;
};

struct TaskData {
  Dataset train;
  Dataset eval;
};

// Deterministic for a given spec. Labels are exactly balanced (sample i of a
// split targets class i mod num_classes) and no sequence appears twice
// across both splits.
TaskData generate(const TaskSpec& spec);

// Seeded reshuffle every epoch; the trailing partial batch is dropped.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return data_->size() / batch_size_; }
  // Throws DataError when the dataset holds fewer samples than one batch.
  TokenBatch next();
  // Row indices of every batch of one epoch, in order.
  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> current_;
};

// "label<TAB>tok tok ..." per line.
void export_lines(const Dataset& data, std::ostream& out);

}  // namespace lightpeft
