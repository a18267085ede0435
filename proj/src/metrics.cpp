#include "docformer/metrics.hpp"

#include <algorithm>

#include "docformer/error.hpp"

namespace docformer {

std::vector<EntitySpan> extract_entities(const std::vector<std::int64_t>& labels, std::int64_t other_label) {
  std::vector<EntitySpan> out;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == other_label) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    out.push_back({i, j, labels[i]});
    i = j;
  }
  return out;
}

void LabelingCounts::add_document(const std::vector<std::int64_t>& gold_labels,
                                  const std::vector<std::int64_t>& predicted_labels,
                                  std::int64_t other_label) {
  if (gold_labels.size() != predicted_labels.size()) {
    throw DimensionError("labeling metrics: " + std::to_string(gold_labels.size()) + " gold labels vs " +
                         std::to_string(predicted_labels.size()) + " predictions");
  }
  const auto g = extract_entities(gold_labels, other_label);
  const auto p = extract_entities(predicted_labels, other_label);
  for (const auto& span : p) true_positives += std::ranges::count(g, span) > 0 ? 1 : 0;
  predicted += p.size();
  gold += g.size();
  for (std::size_t i = 0; i < gold_labels.size(); ++i) correct_tokens += gold_labels[i] == predicted_labels[i];
  total_tokens += gold_labels.size();
  ++n_docs;
}

double LabelingCounts::precision() const {
  return predicted ? static_cast<double>(true_positives) / static_cast<double>(predicted) : 0.0;
}

double LabelingCounts::recall() const {
  return gold ? static_cast<double>(true_positives) / static_cast<double>(gold) : 0.0;
}

double LabelingCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double LabelingCounts::accuracy() const {
  return total_tokens ? static_cast<double>(correct_tokens) / static_cast<double>(total_tokens) : 0.0;
}

}  // namespace docformer
