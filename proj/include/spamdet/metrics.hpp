#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spamdet/corpus.hpp"

namespace spamdet {

// (gold, predicted)
using LabelPair = std::pair<Label, Label>;

struct ConfusionMatrix {
  Label positive_class = Label::spam;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws InputError on an empty list.
ConfusionMatrix confusion(std::span<const LabelPair> pairs, Label positive_class);

// Zero denominators give 0.0.
double precision(const ConfusionMatrix& cm);
double recall(const ConfusionMatrix& cm);
double f1(const ConfusionMatrix& cm);

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassRow {
  Label label = Label::ham;
  Scores scores;
  std::size_t support = 0;
  // Set when precision or recall had a zero denominator.
  bool degenerate = false;
};

struct ClassReport {
  ClassRow ham;
  ClassRow spam;
  Scores macro_avg;
  Scores weighted_avg;
  std::size_t total = 0;
  double accuracy = 0.0;
};

ClassReport report(std::span<const LabelPair> pairs);
ClassReport report(const ConfusionMatrix& cm);

// Rebuilds the pair list behind a per-class count summary.
std::vector<LabelPair> pairs_from_counts(std::size_t ham_correct, std::size_t ham_total,
                                         std::size_t spam_correct, std::size_t spam_total);

// Half-up rounding to `decimals` places.
double round_half_up(double value, int decimals);
std::string format_fixed(double value, int decimals = 4);

nlohmann::ordered_json to_json(const ClassReport& r);
std::string to_table(const ClassReport& r);

}  // namespace spamdet
