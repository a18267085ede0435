#pragma once

#include <cstdint>
#include <vector>

namespace docformer {

struct EntitySpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::int64_t label = 0;
  bool operator==(const EntitySpan&) const = default;
};

// Maximal runs of one label other than `other_label`.
std::vector<EntitySpan> extract_entities(const std::vector<std::int64_t>& labels,
                                         std::int64_t other_label = 0);

// Counts accumulated over documents. Precision with no predicted entity is
// reported as 0, likewise recall with no gold entity.
struct LabelingCounts {
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  std::size_t correct_tokens = 0;
  std::size_t total_tokens = 0;
  std::size_t n_docs = 0;

  void add_document(const std::vector<std::int64_t>& gold_labels,
                    const std::vector<std::int64_t>& predicted_labels, std::int64_t other_label = 0);
  double precision() const;
  double recall() const;
  double f1() const;
  double accuracy() const;
};

}  // namespace docformer
